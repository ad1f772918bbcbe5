//! Record-by-record application of the trust scheme.
//!
//! Each record goes through: replay filter, malicious-entity filter,
//! registration of unseen entities, offset split, optional prediction from the
//! pre-update states, trust update per role, classification, and hash-chained
//! storage in the registry.
//!
//! Entities are namespaced by role: an identity that appears both as a
//! requester and as a service is two entities, each with its own registry.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::cipher::{encrypt_field, CipherError, CipherToken, KeySet};
use crate::control::{classify_entity, EntityStatus, ReplayKey, ReplayWindow, Thresholds};
use crate::predict::{predict_satisfaction, Prediction};
use crate::registry::{Registry, RegistryError, DEFAULT_SECRET};
use crate::tokenchain::{AccessServiceRecord, EncryptedRecord};
use crate::trust::{
    convergence_feasible, convergence_value, split_offset, OffsetRatio, Role, TrajectoryPoint, TrustError,
    TrustOffsetSplit, TrustState, WeightParams,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("record {seq}: {source}")]
    Record { seq: usize, source: TrustError },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub params: WeightParams,
    pub ratio: OffsetRatio,
    /// Punishment lists; `None` evaluates trust without classification.
    pub thresholds: Option<Thresholds>,
    /// Replay window in records; `None` counts every record.
    pub replay_window: Option<usize>,
    /// `kappa` for predicting each record's score before it is applied.
    pub predict_kappa: Option<f64>,
    /// Keep a per-record trace.
    pub trace: bool,
    /// Records after this many are only registered, not evaluated.
    pub eval_limit: Option<usize>,
    pub secret: Vec<u8>,
}

impl PipelineOptions {
    pub fn new(params: WeightParams) -> Self {
        Self {
            params,
            ratio: OffsetRatio::default(),
            thresholds: None,
            replay_window: None,
            predict_kappa: None,
            trace: false,
            eval_limit: None,
            secret: DEFAULT_SECRET.to_vec(),
        }
    }

    pub fn with_ratio(mut self, ratio: OffsetRatio) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_thresholds(mut self, th: Thresholds) -> Self {
        self.thresholds = Some(th);
        self
    }

    pub fn with_replay_window(mut self, tau: usize) -> Self {
        self.replay_window = Some(tau);
        self
    }

    pub fn with_prediction(mut self, kappa: f64) -> Self {
        self.predict_kappa = Some(kappa);
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    pub fn with_eval_limit(mut self, limit: usize) -> Self {
        self.eval_limit = Some(limit);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityState {
    pub trust: TrustState,
    pub status: EntityStatus,
    pub offset_sum: f64,
    pub updates: u64,
}

impl EntityState {
    fn new(t0: f64) -> Self {
        Self { trust: TrustState::seeded(t0), status: EntityStatus::Normal, offset_sum: 0.0, updates: 0 }
    }

    /// Mean offset received so far, 0 for a fresh entity.
    pub fn mean_offset(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.offset_sum / self.updates as f64
        }
    }
}

/// What happened to one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Applied,
    Replay,
    /// An entity of this role is on the malicious list.
    Blocked(Role),
    /// Past the evaluation limit; entities registered only.
    Registered,
}

/// Per-record detail kept when tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub seq: usize,
    pub score: f64,
    pub s_max: f64,
    pub offsets: TrustOffsetSplit,
    /// Indexed by [`Role::index`]; `n` counts updates of that entity.
    pub points: [TrajectoryPoint; 3],
    pub statuses: [EntityStatus; 3],
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub processed: usize,
    pub applied: usize,
    pub replays: usize,
    pub blocked: usize,
    pub registered_only: usize,
    /// States that violated `sum(T^2) >= n alpha^2 S^2 / delta^2`.
    pub infeasible_states: usize,
}

pub struct Pipeline {
    opts: PipelineOptions,
    registries: [Registry; 3],
    entities: [BTreeMap<CipherToken, EntityState>; 3],
    replay: Option<ReplayWindow>,
    stats: RunStats,
    trace: Vec<StepTrace>,
}

impl Pipeline {
    pub fn new(opts: PipelineOptions) -> Self {
        let replay = opts.replay_window.map(ReplayWindow::new);
        Self {
            opts,
            registries: Default::default(),
            entities: Default::default(),
            replay,
            stats: RunStats::default(),
            trace: Vec::new(),
        }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.opts
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn trace(&self) -> &[StepTrace] {
        &self.trace
    }

    pub fn registry(&self, role: Role) -> &Registry {
        &self.registries[role.index()]
    }

    pub fn registry_mut(&mut self, role: Role) -> &mut Registry {
        &mut self.registries[role.index()]
    }

    pub fn entity(&self, role: Role, pk: &CipherToken) -> Option<&EntityState> {
        self.entities[role.index()].get(pk)
    }

    /// Entities of one role in token order.
    pub fn entities(&self, role: Role) -> impl Iterator<Item = (&CipherToken, &EntityState)> {
        self.entities[role.index()].iter()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.iter().map(BTreeMap::len).sum()
    }

    pub fn run<'a, I>(&mut self, records: I) -> Result<RunStats, PipelineError>
    where
        I: IntoIterator<Item = &'a EncryptedRecord>,
    {
        for r in records {
            self.process(r)?;
        }
        Ok(self.stats)
    }

    pub fn process(&mut self, rec: &EncryptedRecord) -> Result<Outcome, PipelineError> {
        let seq = self.stats.processed;
        self.stats.processed += 1;
        let tokens = [&rec.cs, &rec.co, &rec.ce];

        if self.opts.eval_limit.is_some_and(|l| seq >= l) {
            for role in Role::ALL {
                self.ensure_registered(role, tokens[role.index()])?;
            }
            self.stats.registered_only += 1;
            return Ok(Outcome::Registered);
        }
        if let Some(window) = &mut self.replay {
            if window.observe(ReplayKey::new(&rec.cs, &rec.co, &rec.ce, rec.score), seq) {
                self.stats.replays += 1;
                return Ok(Outcome::Replay);
            }
        }
        for role in Role::ALL {
            let status = self.entity(role, tokens[role.index()]).map(|e| e.status);
            if status == Some(EntityStatus::Malicious) {
                self.stats.blocked += 1;
                return Ok(Outcome::Blocked(role));
            }
        }
        let offsets = split_offset(rec.score, rec.s_max, self.opts.ratio)
            .map_err(|source| PipelineError::Record { seq, source })?;
        for role in Role::ALL {
            self.ensure_registered(role, tokens[role.index()])?;
        }

        let prediction = self.opts.predict_kappa.map(|kappa| {
            let [s, o, e] = Role::ALL.map(|r| &self.entities[r.index()][tokens[r.index()]].trust);
            predict_satisfaction([s, o, e], &offsets, &self.opts.params, kappa, rec.s_max)
        });

        let params = self.opts.params;
        let mut points = [TrajectoryPoint { n: 0, t: 0.0, t_prime: None, offset: 0.0 }; 3];
        let mut statuses = [EntityStatus::Normal; 3];
        for role in Role::ALL {
            let i = role.index();
            let pk = tokens[i];
            let offset = offsets.get(role);
            let entity = self.entities[i].get_mut(pk).expect("registered above");
            let raw = entity.trust.next_value(offset, &params);
            let (status, stored) = match &self.opts.thresholds {
                Some(th) => classify_entity(raw, th),
                None => (EntityStatus::Normal, raw),
            };
            entity.trust.push(stored);
            entity.status = status;
            entity.offset_sum += offset;
            entity.updates += 1;
            if !convergence_feasible(&entity.trust, offset, &params) {
                self.stats.infeasible_states += 1;
            }
            points[i] = TrajectoryPoint {
                n: entity.updates as usize,
                t: stored,
                t_prime: convergence_value(&entity.trust, offset, &params),
                offset,
            };
            statuses[i] = status;
            self.registries[i].store_trust(pk, stored)?;
        }
        self.stats.applied += 1;
        if self.opts.trace {
            self.trace.push(StepTrace { seq, score: rec.score, s_max: rec.s_max, offsets, points, statuses, prediction });
        }
        Ok(Outcome::Applied)
    }

    fn ensure_registered(&mut self, role: Role, pk: &CipherToken) -> Result<(), PipelineError> {
        let i = role.index();
        if !self.entities[i].contains_key(pk) {
            let t0 = self.opts.params.t0;
            self.registries[i].register_entity(pk, &self.opts.secret, t0)?;
            self.entities[i].insert(pk.clone(), EntityState::new(t0));
        }
        Ok(())
    }

    /// Prediction for a prospective interaction from current states. Each
    /// role's offset is that entity's mean historical offset; unseen entities
    /// count as fresh at `t0`.
    pub fn predict_for(&self, s: &CipherToken, o: &CipherToken, e: &CipherToken, kappa: f64, s_max: f64) -> Prediction {
        let fresh = EntityState::new(self.opts.params.t0);
        let tokens = [s, o, e];
        let [es, eo, ee] = Role::ALL.map(|r| self.entities[r.index()].get(tokens[r.index()]).unwrap_or(&fresh));
        let offsets = TrustOffsetSplit { s_s: es.mean_offset(), s_o: eo.mean_offset(), s_e: ee.mean_offset() };
        predict_satisfaction([&es.trust, &eo.trust, &ee.trust], &offsets, &self.opts.params, kappa, s_max)
    }

    /// Latest trust value per entity of one role, in token order.
    pub fn latest_trusts(&self, role: Role) -> Vec<(CipherToken, f64)> {
        self.entities(role).map(|(pk, e)| (pk.clone(), e.trust.last())).collect()
    }

    /// Per-role trajectory of a single-triple run, from the trace.
    pub fn trajectory(&self, role: Role) -> Vec<TrajectoryPoint> {
        self.trace.iter().map(|s| s.points[role.index()]).collect()
    }

    /// Re-derives the stored history of `pk` by replaying `records` from
    /// scratch with the same options; the repair source for hash checks.
    pub fn replay_history(&self, records: &[EncryptedRecord], role: Role, pk: &CipherToken) -> Option<Vec<f64>> {
        let mut opts = self.opts.clone();
        opts.trace = false;
        opts.predict_kappa = None;
        let mut fresh = Pipeline::new(opts);
        fresh.run(records).ok()?;
        fresh.registry(role).get_history(pk).ok().map(<[f64]>::to_vec)
    }
}

fn cached_token<'a>(
    id: &'a str,
    cache: &mut HashMap<&'a str, CipherToken>,
    keys: &KeySet,
) -> Result<CipherToken, CipherError> {
    if let Some(t) = cache.get(id) {
        return Ok(t.clone());
    }
    let t = encrypt_field(id.as_bytes(), keys)?;
    cache.insert(id, t.clone());
    Ok(t)
}

/// Encrypts a plaintext stream, caching tokens per identity.
pub fn encrypt_stream(records: &[AccessServiceRecord], keys: &KeySet) -> Result<Vec<EncryptedRecord>, PipelineError> {
    let mut cache = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for (seq, r) in records.iter().enumerate() {
        r.validate().map_err(|e| PipelineError::Record { seq, source: TrustError::Score(e) })?;
        out.push(EncryptedRecord {
            cs: cached_token(&r.s, &mut cache, keys)?,
            co: cached_token(&r.o, &mut cache, keys)?,
            ce: cached_token(&r.e, &mut cache, keys)?,
            score: r.score,
            s_max: r.s_max,
        });
    }
    Ok(out)
}
