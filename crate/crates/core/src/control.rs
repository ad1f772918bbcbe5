//! Control layer: punishment lists, trust-driven mining difficulty, replay
//! filtering and provider/service recommendation.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{encode_trust, CipherToken};
use crate::predict::Prediction;

pub const DEFAULT_REPLAY_WINDOW: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("thresholds require mu > nu and epsilon < 0 (mu={mu}, nu={nu}, epsilon={epsilon})")]
    InvalidThresholds { mu: f64, nu: f64, epsilon: f64 },
    #[error("cannot derive thresholds from an empty trust population")]
    EmptyPopulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Warning threshold.
    pub mu: f64,
    /// Malicious threshold.
    pub nu: f64,
    /// Offset added to a warned entity's trust.
    pub epsilon: f64,
    /// Replay window in records.
    pub tau: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { mu: 0.08, nu: 0.05, epsilon: -0.01, tau: DEFAULT_REPLAY_WINDOW }
    }
}

impl Thresholds {
    pub fn new(mu: f64, nu: f64, epsilon: f64, tau: usize) -> Result<Self, ControlError> {
        let t = Self { mu, nu, epsilon, tau };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.mu > self.nu && self.epsilon < 0.0 {
            Ok(())
        } else {
            Err(ControlError::InvalidThresholds { mu: self.mu, nu: self.nu, epsilon: self.epsilon })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EntityStatus {
    #[default]
    Normal,
    Warning,
    Malicious,
}

/// Maps a trust value to its list and the value to store.
pub fn classify_entity(t: f64, th: &Thresholds) -> (EntityStatus, f64) {
    if t > th.mu {
        (EntityStatus::Normal, t)
    } else if t > th.nu {
        (EntityStatus::Warning, t + th.epsilon)
    } else {
        (EntityStatus::Malicious, t)
    }
}

/// `mu = mean - sd`, `nu = mean - 2 sd` over the latest trust of every entity,
/// floored at zero. A population with no spread (or one whose floored values
/// collapse) falls back to `0.9 c` and `0.8 c` of its mean `c`; `degenerate`
/// reports that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicThresholds {
    pub mu: f64,
    pub nu: f64,
    pub degenerate: bool,
}

pub fn dynamic_thresholds(global_trusts: &[f64]) -> Result<DynamicThresholds, ControlError> {
    if global_trusts.is_empty() {
        return Err(ControlError::EmptyPopulation);
    }
    let n = global_trusts.len() as f64;
    let mean = global_trusts.iter().sum::<f64>() / n;
    let var = global_trusts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let mu = (mean - sd).max(0.0);
    let nu = (mean - 2.0 * sd).max(0.0);
    if mu > nu {
        Ok(DynamicThresholds { mu, nu, degenerate: false })
    } else {
        Ok(DynamicThresholds { mu: 0.9 * mean, nu: 0.8 * mean, degenerate: true })
    }
}

/// Mining difficulty for a miner with trust `t`: `max(floor, base - round(scale t))`.
pub fn mining_difficulty(t: f64, base: u32, scale: f64, floor: u32) -> u32 {
    let floor = floor.min(base);
    let reduction = (scale * t).round();
    if !reduction.is_finite() || reduction <= 0.0 {
        return base;
    }
    let reduced = f64::from(base) - reduction;
    if reduced <= f64::from(floor) {
        floor
    } else {
        reduced as u32
    }
}

/// Identity of a record for replay purposes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReplayKey {
    cs: CipherToken,
    co: CipherToken,
    ce: CipherToken,
    score: String,
}

impl ReplayKey {
    pub fn new(cs: &CipherToken, co: &CipherToken, ce: &CipherToken, score: f64) -> Self {
        Self { cs: cs.clone(), co: co.clone(), ce: ce.clone(), score: encode_trust(score) }
    }
}

/// Sliding replay detector over stream positions.
///
/// A record at position `seq` is a replay when the same tuple was last counted
/// at a position `p` with `seq - p <= tau`. Positions are the records' original
/// stream positions, so filtering an already filtered stream is a no-op.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    tau: usize,
    last_counted: HashMap<ReplayKey, usize>,
    order: VecDeque<(usize, ReplayKey)>,
}

impl ReplayWindow {
    pub fn new(tau: usize) -> Self {
        Self { tau, last_counted: HashMap::new(), order: VecDeque::new() }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Whether `key` at `seq` is a replay, without recording it.
    pub fn is_replay(&self, key: &ReplayKey, seq: usize) -> bool {
        self.last_counted.get(key).is_some_and(|&p| seq.saturating_sub(p) <= self.tau)
    }

    /// Records `key` at `seq` unless it is a replay. Returns true for a replay.
    /// `seq` must not decrease between calls.
    pub fn observe(&mut self, key: ReplayKey, seq: usize) -> bool {
        self.expire(seq);
        if self.is_replay(&key, seq) {
            return true;
        }
        self.last_counted.insert(key.clone(), seq);
        self.order.push_back((seq, key));
        false
    }

    fn expire(&mut self, seq: usize) {
        while let Some((p, _)) = self.order.front() {
            if seq.saturating_sub(*p) <= self.tau {
                break;
            }
            let (p, key) = self.order.pop_front().expect("front exists");
            if self.last_counted.get(&key) == Some(&p) {
                self.last_counted.remove(&key);
            }
        }
    }
}

/// Convenience form: is `key` repeated inside `recent`, a list of
/// `(position, key)` pairs already counted?
pub fn detect_replay(key: &ReplayKey, seq: usize, recent: &[(usize, ReplayKey)], tau: usize) -> bool {
    recent.iter().any(|(p, k)| k == key && seq.saturating_sub(*p) <= tau)
}

/// One recommendable `(provider, service)` pair with its prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub o: CipherToken,
    pub e: CipherToken,
    pub prediction: Prediction,
    /// Provider's latest trust, used to break ties.
    pub provider_trust: f64,
    pub provider_status: EntityStatus,
    pub service_status: EntityStatus,
}

/// Ranks candidates by predicted satisfaction, best first. Candidates with a
/// Malicious provider or service are dropped; undefined predictions go last;
/// ties fall back to higher provider trust, then provider and service token.
pub fn recommend(mut candidates: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    candidates.retain(|c| c.provider_status != EntityStatus::Malicious && c.service_status != EntityStatus::Malicious);
    candidates.sort_by(|a, b| {
        let pa = a.prediction.value.unwrap_or(f64::NEG_INFINITY);
        let pb = b.prediction.value.unwrap_or(f64::NEG_INFINITY);
        pb.total_cmp(&pa)
            .then(b.provider_trust.total_cmp(&a.provider_trust))
            .then_with(|| a.o.cmp(&b.o))
            .then_with(|| a.e.cmp(&b.e))
    });
    candidates.truncate(k);
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th() -> Thresholds {
        Thresholds::new(0.08, 0.05, -0.01, 1000).unwrap()
    }

    #[test]
    fn classification_cases() {
        assert_eq!(classify_entity(0.09, &th()), (EntityStatus::Normal, 0.09));
        let (s, v) = classify_entity(0.07, &th());
        assert_eq!(s, EntityStatus::Warning);
        assert!((v - 0.06).abs() < 1e-15);
        assert_eq!(classify_entity(0.04, &th()), (EntityStatus::Malicious, 0.04));
        assert_eq!(classify_entity(0.08, &th()).0, EntityStatus::Warning);
        assert_eq!(classify_entity(0.05, &th()).0, EntityStatus::Malicious);
    }

    #[test]
    fn threshold_validation() {
        assert!(Thresholds::new(0.05, 0.08, -0.01, 1).is_err());
        assert!(Thresholds::new(0.08, 0.05, 0.0, 1).is_err());
    }

    #[test]
    fn dynamic_examples() {
        let d = dynamic_thresholds(&[0.1, 0.2, 0.3]).unwrap();
        assert!(!d.degenerate);
        assert!((d.mu - 0.118350).abs() < 1e-6, "{}", d.mu);
        assert!((d.nu - 0.036701).abs() < 1e-6, "{}", d.nu);
        let d = dynamic_thresholds(&[0.2; 5]).unwrap();
        assert!(d.degenerate);
        assert!((d.mu - 0.18).abs() < 1e-15 && (d.nu - 0.16).abs() < 1e-15);
        assert_eq!(dynamic_thresholds(&[]), Err(ControlError::EmptyPopulation));
    }

    #[test]
    fn difficulty_mapping() {
        assert_eq!(mining_difficulty(0.0, 20, 16.0, 4), 20);
        assert_eq!(mining_difficulty(0.5, 20, 16.0, 4), 12);
        assert_eq!(mining_difficulty(5.0, 20, 16.0, 4), 4);
        assert_eq!(mining_difficulty(-1.0, 20, 16.0, 4), 20);
    }

    fn tok(i: u8) -> CipherToken {
        CipherToken::from_bytes(vec![i; 8]).unwrap()
    }

    fn key(i: u8, score: f64) -> ReplayKey {
        ReplayKey::new(&tok(i), &tok(i + 1), &tok(i + 2), score)
    }

    #[test]
    fn replay_window() {
        let mut w = ReplayWindow::new(3);
        assert!(!w.observe(key(1, 5.0), 0));
        assert!(w.observe(key(1, 5.0), 1));
        assert!(!w.observe(key(1, 4.0), 2));
        assert!(w.observe(key(1, 5.0), 3));
        // position 4 is more than tau past the counted position 0
        assert!(!w.observe(key(1, 5.0), 4));
        assert!(w.observe(key(1, 5.0), 7));
        assert!(!w.observe(key(1, 5.0), 8));
    }

    #[test]
    fn detect_replay_against_slice() {
        let recent = vec![(10, key(1, 5.0))];
        assert!(detect_replay(&key(1, 5.0), 12, &recent, 5));
        assert!(!detect_replay(&key(1, 5.0), 16, &recent, 5));
        assert!(!detect_replay(&key(2, 5.0), 12, &recent, 5));
    }

    fn cand(o: u8, p: Option<f64>, trust: f64, status: EntityStatus) -> Candidate {
        Candidate {
            o: tok(o),
            e: tok(100),
            prediction: Prediction { value: p },
            provider_trust: trust,
            provider_status: status,
            service_status: EntityStatus::Normal,
        }
    }

    #[test]
    fn ranking() {
        let one = recommend(vec![cand(1, Some(3.0), 0.1, EntityStatus::Normal)], 10);
        assert_eq!(one.len(), 1);
        let ranked = recommend(
            vec![
                cand(1, None, 0.9, EntityStatus::Normal),
                cand(2, Some(3.0), 0.1, EntityStatus::Normal),
                cand(3, Some(4.0), 0.1, EntityStatus::Malicious),
                cand(4, Some(3.0), 0.2, EntityStatus::Normal),
                cand(5, Some(3.5), 0.1, EntityStatus::Warning),
            ],
            10,
        );
        let order: Vec<u8> = ranked.iter().map(|c| c.o.as_bytes()[0]).collect();
        assert_eq!(order, vec![5, 4, 2, 1]);
        assert_eq!(recommend(ranked, 2).len(), 2);
    }
}
