//! Entity registration and trust storage.
//!
//! Two stores are kept side by side. The DHT store holds one
//! `(pk, sk_digest, t0, check)` record per entity, addressed by the digest of the
//! entity's public key. The history store is the local, editable copy of every
//! trust value an entity has had. `check` is the hash chain over that history,
//! so local edits are detected by [`Registry::hash_check`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{chain_digest, chain_history, digest, trust_digest, CipherToken, Digest};

/// Secret stored for every entity when no real key material is supplied.
pub const DEFAULT_SECRET: &[u8] = b"sk";
pub const DHT_FILE: &str = "dht.json";
pub const HISTORY_FILE: &str = "history.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("entity {0} is already registered")]
    AlreadyRegistered(String),
    #[error("entity {0} is not registered")]
    NotFound(String),
    #[error("secret does not match for entity {0}")]
    Authentication(String),
    #[error("snapshot is inconsistent: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub pk: CipherToken,
    pub sk_digest: Digest,
    pub t0: f64,
    /// Hash chain over the entity's trust history.
    pub check: Digest,
}

/// Key-value store addressed by digest, standing in for a distributed hash table.
pub trait Dht {
    fn get(&self, key: &Digest) -> Option<&EntityRecord>;
    fn get_mut(&mut self, key: &Digest) -> Option<&mut EntityRecord>;
    fn put(&mut self, key: Digest, record: EntityRecord);
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryDht {
    entries: BTreeMap<Digest, EntityRecord>,
}

impl MemoryDht {
    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &EntityRecord)> {
        self.entries.iter()
    }
}

impl Dht for MemoryDht {
    fn get(&self, key: &Digest) -> Option<&EntityRecord> {
        self.entries.get(key)
    }

    fn get_mut(&mut self, key: &Digest) -> Option<&mut EntityRecord> {
        self.entries.get_mut(key)
    }

    fn put(&mut self, key: Digest, record: EntityRecord) {
        self.entries.insert(key, record);
    }

    fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Local trust histories, `pk-hex -> [T0, T1, ..]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HistoryStore {
    entries: BTreeMap<String, Vec<f64>>,
}

impl HistoryStore {
    pub fn get(&self, pk: &CipherToken) -> Option<&Vec<f64>> {
        self.entries.get(&pk.to_hex())
    }

    /// Direct edit of the local copy, as an attacker with file access could do.
    pub fn get_mut(&mut self, pk: &CipherToken) -> Option<&mut Vec<f64>> {
        self.entries.get_mut(&pk.to_hex())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Outcome of [`Registry::hash_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOutcome {
    Intact,
    /// Local history did not match and was reloaded from the replay source.
    Repaired,
    /// Mismatch, and the replay source could not supply a matching history.
    Unrepaired,
}

impl CheckOutcome {
    pub fn passed(self) -> bool {
        self == CheckOutcome::Intact
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry<D: Dht = MemoryDht> {
    dht: D,
    history: HistoryStore,
}

fn key_of(pk: &CipherToken) -> Digest {
    digest(pk.as_bytes())
}

impl<D: Dht> Registry<D> {
    pub fn with_dht(dht: D) -> Self {
        Self { dht, history: HistoryStore::default() }
    }

    pub fn dht(&self) -> &D {
        &self.dht
    }

    pub fn history_store(&self) -> &HistoryStore {
        &self.history
    }

    pub fn history_store_mut(&mut self) -> &mut HistoryStore {
        &mut self.history
    }

    pub fn len(&self) -> usize {
        self.dht.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dht.is_empty()
    }

    pub fn is_registered(&self, pk: &CipherToken) -> bool {
        self.dht.get(&key_of(pk)).is_some()
    }

    pub fn entity(&self, pk: &CipherToken) -> Option<&EntityRecord> {
        self.dht.get(&key_of(pk))
    }

    pub fn register_entity(&mut self, pk: &CipherToken, secret: &[u8], t0: f64) -> Result<&EntityRecord, RegistryError> {
        let key = key_of(pk);
        if self.dht.get(&key).is_some() {
            return Err(RegistryError::AlreadyRegistered(pk.to_hex()));
        }
        let record = EntityRecord { pk: pk.clone(), sk_digest: digest(secret), t0, check: trust_digest(t0) };
        self.dht.put(key, record);
        self.history.entries.insert(pk.to_hex(), vec![t0]);
        Ok(self.dht.get(&key).expect("just inserted"))
    }

    /// Appends a trust value and advances the stored check value.
    pub fn store_trust(&mut self, pk: &CipherToken, value: f64) -> Result<Digest, RegistryError> {
        let not_found = || RegistryError::NotFound(pk.to_hex());
        let record = self.dht.get_mut(&key_of(pk)).ok_or_else(not_found)?;
        let history = self.history.entries.get_mut(&pk.to_hex()).ok_or_else(not_found)?;
        record.check = chain_digest(&record.check, value);
        history.push(value);
        Ok(record.check)
    }

    pub fn get_history(&self, pk: &CipherToken) -> Result<&[f64], RegistryError> {
        self.history.get(pk).map(Vec::as_slice).ok_or_else(|| RegistryError::NotFound(pk.to_hex()))
    }

    /// Recomputes the chain over the local history and compares it with the
    /// DHT check value. On mismatch the history is reloaded from `replay`,
    /// which should re-derive it from the ledger; the reload is kept only if it
    /// matches the check value.
    pub fn hash_check<F>(&mut self, pk: &CipherToken, replay: F) -> Result<CheckOutcome, RegistryError>
    where
        F: FnOnce(&CipherToken) -> Option<Vec<f64>>,
    {
        let expected = self.entity(pk).ok_or_else(|| RegistryError::NotFound(pk.to_hex()))?.check;
        let local = self.get_history(pk)?;
        if chain_history(local) == Some(expected) {
            return Ok(CheckOutcome::Intact);
        }
        match replay(pk) {
            Some(fresh) if chain_history(&fresh) == Some(expected) => {
                self.history.entries.insert(pk.to_hex(), fresh);
                Ok(CheckOutcome::Repaired)
            }
            _ => Ok(CheckOutcome::Unrepaired),
        }
    }

    /// Check without any repair attempt.
    pub fn verify(&self, pk: &CipherToken) -> Result<bool, RegistryError> {
        let expected = self.entity(pk).ok_or_else(|| RegistryError::NotFound(pk.to_hex()))?.check;
        Ok(chain_history(self.get_history(pk)?) == Some(expected))
    }

    pub fn change_password(&mut self, pk: &CipherToken, old_secret: &[u8], new_secret: &[u8]) -> Result<(), RegistryError> {
        let record = self.dht.get_mut(&key_of(pk)).ok_or_else(|| RegistryError::NotFound(pk.to_hex()))?;
        if record.sk_digest != digest(old_secret) {
            return Err(RegistryError::Authentication(pk.to_hex()));
        }
        record.sk_digest = digest(new_secret);
        Ok(())
    }
}

impl Registry<MemoryDht> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.dht.iter().map(|(_, r)| r)
    }

    pub fn dht_json(&self) -> Result<String, RegistryError> {
        Ok(serde_json::to_string_pretty(&self.dht)?)
    }

    pub fn history_json(&self) -> Result<String, RegistryError> {
        Ok(serde_json::to_string_pretty(&self.history)?)
    }

    pub fn from_json(dht: &str, history: &str) -> Result<Self, RegistryError> {
        let dht: MemoryDht = serde_json::from_str(dht)?;
        let history: HistoryStore = serde_json::from_str(history)?;
        for (key, record) in dht.iter() {
            if *key != key_of(&record.pk) {
                return Err(RegistryError::Corrupt(format!("key {key} does not address pk {}", record.pk)));
            }
        }
        Ok(Self { dht, history })
    }

    /// Writes `dht.json` and `history.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RegistryError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DHT_FILE), self.dht_json()?)?;
        fs::write(dir.join(HISTORY_FILE), self.history_json()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RegistryError> {
        Self::from_json(&fs::read_to_string(dir.join(DHT_FILE))?, &fs::read_to_string(dir.join(HISTORY_FILE))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::encode_trust;

    fn pk(i: u8) -> CipherToken {
        CipherToken::from_bytes(vec![i; 8]).unwrap()
    }

    #[test]
    fn registration() {
        let mut r = Registry::new();
        let rec = r.register_entity(&pk(1), DEFAULT_SECRET, 0.1).unwrap().clone();
        assert_eq!(rec.check, digest(encode_trust(0.1).as_bytes()));
        assert_eq!(rec.sk_digest, digest(b"sk"));
        assert!(r.verify(&pk(1)).unwrap());
        let before = r.clone();
        assert!(matches!(r.register_entity(&pk(1), b"x", 0.2), Err(RegistryError::AlreadyRegistered(_))));
        assert_eq!(r, before);
        assert_eq!(r.get_history(&pk(1)).unwrap(), &[0.1]);
    }

    #[test]
    fn store_and_replay() {
        let mut r = Registry::new();
        r.register_entity(&pk(1), DEFAULT_SECRET, 0.1).unwrap();
        r.store_trust(&pk(1), 0.1125).unwrap();
        let check = r.store_trust(&pk(1), 0.11875).unwrap();
        assert_eq!(Some(check), chain_history(&[0.1, 0.1125, 0.11875]));
        assert_eq!(r.get_history(&pk(1)).unwrap().len(), 3);
        assert!(matches!(r.store_trust(&pk(9), 0.5), Err(RegistryError::NotFound(_))));
        assert!(matches!(r.get_history(&pk(9)), Err(RegistryError::NotFound(_))));
    }

    #[test]
    fn detect_and_repair() {
        let mut r = Registry::new();
        r.register_entity(&pk(1), DEFAULT_SECRET, 0.1).unwrap();
        for v in [0.2, 0.3, 0.4] {
            r.store_trust(&pk(1), v).unwrap();
        }
        let good = r.get_history(&pk(1)).unwrap().to_vec();
        assert_eq!(r.hash_check(&pk(1), |_| None).unwrap(), CheckOutcome::Intact);

        r.history_store_mut().get_mut(&pk(1)).unwrap()[2] = 0.9;
        assert_eq!(r.hash_check(&pk(1), |_| None).unwrap(), CheckOutcome::Unrepaired);
        // a replay source that is itself wrong is not accepted
        assert_eq!(r.hash_check(&pk(1), |_| Some(vec![0.1])).unwrap(), CheckOutcome::Unrepaired);
        let g = good.clone();
        assert_eq!(r.hash_check(&pk(1), move |_| Some(g)).unwrap(), CheckOutcome::Repaired);
        assert_eq!(r.hash_check(&pk(1), |_| None).unwrap(), CheckOutcome::Intact);
        assert_eq!(r.get_history(&pk(1)).unwrap(), good.as_slice());
    }

    #[test]
    fn passwords() {
        let mut r = Registry::new();
        r.register_entity(&pk(1), DEFAULT_SECRET, 0.1).unwrap();
        let original = r.entity(&pk(1)).unwrap().sk_digest;
        assert!(matches!(r.change_password(&pk(1), b"wrong", b"new"), Err(RegistryError::Authentication(_))));
        assert_eq!(r.entity(&pk(1)).unwrap().sk_digest, original);
        r.change_password(&pk(1), b"sk", b"new").unwrap();
        assert!(r.change_password(&pk(1), b"sk", b"again").is_err());
        r.change_password(&pk(1), b"new", b"sk").unwrap();
        assert_eq!(r.entity(&pk(1)).unwrap().sk_digest, original);
    }

    #[test]
    fn snapshot_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Registry::new();
        for i in 0..4 {
            r.register_entity(&pk(i), DEFAULT_SECRET, 0.1).unwrap();
            r.store_trust(&pk(i), 0.1 + f64::from(i) / 3.0).unwrap();
        }
        r.save(dir.path()).unwrap();
        let back = Registry::load(dir.path()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.dht_json().unwrap(), fs::read_to_string(dir.path().join(DHT_FILE)).unwrap());
        assert_eq!(back.history_json().unwrap(), fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap());
    }

    #[test]
    fn snapshot_rejects_misaddressed_records() {
        let mut r = Registry::new();
        r.register_entity(&pk(1), DEFAULT_SECRET, 0.1).unwrap();
        let dht = r.dht_json().unwrap().replace(&pk(1).to_hex(), &pk(2).to_hex());
        assert!(matches!(Registry::from_json(&dht, &r.history_json().unwrap()), Err(RegistryError::Corrupt(_))));
    }
}
