//! Trust management over a ledger of encrypted access-service records.
//!
//! Records `(requester, provider, service, score)` are encrypted field-wise
//! and committed to a proof-of-work chain ([`tokenchain`]). Trust evaluation
//! reads the ledger without decrypting: each score is split into per-role
//! offsets and folded into running statistics ([`trust`]), whose history is
//! hash-chained in a registry ([`registry`]). The control layer
//! ([`control`]) classifies entities, filters replays and ranks
//! recommendations from satisfaction predictions ([`predict`]).
//!
//! ```
//! use tbtm_core::trust::{split_offset, update_trust, OffsetRatio, TrustState, WeightParams};
//!
//! let params = WeightParams::default();
//! let offsets = split_offset(5.0, 10.0, OffsetRatio::default()).unwrap();
//! let mut provider = TrustState::seeded(params.t0);
//! let t = update_trust(&mut provider, offsets.s_o, &params);
//! assert!((t - 0.1125).abs() < 1e-12);
//! ```

pub mod cipher;
pub mod config;
pub mod control;
pub mod datagen;
pub mod experiment;
pub mod pipeline;
pub mod predict;
pub mod registry;
pub mod tokenchain;
pub mod trust;

pub use cipher::{chain_digest, decrypt_field, digest, encrypt_field, CipherError, CipherToken, Digest, KeySet};
pub use config::{Config, ConfigError};
pub use control::{classify_entity, dynamic_thresholds, recommend, EntityStatus, Thresholds};
pub use datagen::{DatagenError, FixedPreset, OnOffPattern};
pub use experiment::ExperimentError;
pub use pipeline::{Pipeline, PipelineError, PipelineOptions};
pub use predict::{predict_satisfaction, Prediction};
pub use registry::{CheckOutcome, Registry, RegistryError};
pub use tokenchain::{AccessServiceRecord, Block, BlockHeader, EncryptedRecord, Ledger, LedgerError};
pub use trust::{Role, TrustError, TrustState, WeightParams};
