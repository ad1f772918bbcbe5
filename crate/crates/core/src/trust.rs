//! Trust evaluation: offset splitting, the four-statistic update, the
//! closed-form convergence value and its error terms.
//!
//! Every entity keeps running sums of its trust history so one update is O(1):
//!
//! ```text
//! T[n+1] = alpha * S + beta * T[n] + gamma * mean(T) + delta * std(T)
//! T'[n]  = sqrt(mean(T^2) - alpha^2 S^2 / delta^2)
//! ```
//!
//! The history is seeded with `t0`, so statistics are taken over
//! `T[0], .., T[n]` and the standard deviation is the population one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenchain::validate_score;

/// Mean offset error observed on fixed-score runs; the fallback when a run is
/// too short to estimate its own.
pub const REFERENCE_KAPPA: f64 = 0.05311685;
/// Records discarded before tail statistics are taken.
pub const BURN_IN: usize = 1000;
pub const DEFAULT_HISTORY_CAP: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("weight parameters violate alpha>0, beta>0, gamma>0, beta+gamma=1, delta<0: {0}")]
    InvalidParams(String),
    #[error("offset ratio components must be positive")]
    InvalidRatio,
    #[error("{0}")]
    Score(String),
    #[error("no samples after burn-in of {0}")]
    EmptyTail(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub t0: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self { alpha: 0.05, beta: 0.5, gamma: 0.5, delta: -0.5, t0: 0.1 }
    }
}

impl WeightParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64, t0: f64) -> Result<Self, TrustError> {
        let p = Self { alpha, beta, gamma, delta, t0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TrustError> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && self.gamma > 0.0
            && (self.beta + self.gamma - 1.0).abs() <= 1e-12
            && self.delta < 0.0
            && self.t0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TrustError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Share of a normalized score given to requester, provider and service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetRatio {
    pub rs: u32,
    pub ro: u32,
    pub re: u32,
}

impl Default for OffsetRatio {
    fn default() -> Self {
        Self { rs: 1, ro: 3, re: 2 }
    }
}

impl OffsetRatio {
    pub fn new(rs: u32, ro: u32, re: u32) -> Result<Self, TrustError> {
        if rs == 0 || ro == 0 || re == 0 {
            return Err(TrustError::InvalidRatio);
        }
        Ok(Self { rs, ro, re })
    }

    /// Parses `1:3:2`.
    pub fn parse(s: &str) -> Result<Self, TrustError> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| TrustError::InvalidRatio)?;
        match parts[..] {
            [rs, ro, re] => Self::new(rs, ro, re),
            _ => Err(TrustError::InvalidRatio),
        }
    }

    fn total(&self) -> f64 {
        f64::from(self.rs + self.ro + self.re)
    }
}

impl std::fmt::Display for OffsetRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.rs, self.ro, self.re)
    }
}

/// The three roles of an access service record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Service requester.
    #[serde(rename = "SR")]
    Requester,
    /// Service provider.
    #[serde(rename = "SP")]
    Provider,
    #[serde(rename = "Service")]
    Service,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Requester, Role::Provider, Role::Service];

    pub fn label(self) -> &'static str {
        match self {
            Role::Requester => "SR",
            Role::Provider => "SP",
            Role::Service => "Service",
        }
    }

    /// Single-letter tag used in file names and columns.
    pub fn letter(self) -> &'static str {
        match self {
            Role::Requester => "s",
            Role::Provider => "o",
            Role::Service => "e",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrustOffsetSplit {
    pub s_s: f64,
    pub s_o: f64,
    pub s_e: f64,
}

impl TrustOffsetSplit {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Requester => self.s_s,
            Role::Provider => self.s_o,
            Role::Service => self.s_e,
        }
    }

    pub fn total(&self) -> f64 {
        self.s_s + self.s_o + self.s_e
    }
}

pub fn split_offset(score: f64, s_max: f64, ratio: OffsetRatio) -> Result<TrustOffsetSplit, TrustError> {
    validate_score(score, s_max).map_err(TrustError::Score)?;
    let norm = score / s_max;
    let total = ratio.total();
    Ok(TrustOffsetSplit {
        s_s: norm * f64::from(ratio.rs) / total,
        s_o: norm * f64::from(ratio.ro) / total,
        s_e: norm * f64::from(ratio.re) / total,
    })
}

/// Running statistics of one entity's trust history.
///
/// The mean and spread are tracked with Welford's update alongside the raw
/// sums, so a constant history has exactly zero deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustState {
    count: u64,
    last: f64,
    sum: f64,
    sum_sq: f64,
    mean: f64,
    m2: f64,
    history: Option<(VecDeque<f64>, usize)>,
}

impl TrustState {
    pub fn seeded(t0: f64) -> Self {
        Self { count: 1, last: t0, sum: t0, sum_sq: t0 * t0, mean: t0, m2: 0.0, history: None }
    }

    /// Seeded state that also keeps the most recent `cap` values.
    pub fn seeded_with_history(t0: f64, cap: usize) -> Self {
        let mut s = Self::seeded(t0);
        let mut h = VecDeque::new();
        if cap > 0 {
            h.push_back(t0);
        }
        s.history = Some((h, cap));
        s
    }

    /// Rebuilds the running sums from a full history, head first. `None` when empty.
    pub fn from_history(values: &[f64]) -> Option<Self> {
        let (first, rest) = values.split_first()?;
        let mut s = Self::seeded(*first);
        for &v in rest {
            s.push(v);
        }
        Some(s)
    }

    /// Number of history entries, including the seed.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn last(&self) -> f64 {
        self.last
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `(1/n) sum(T^2)`.
    pub fn mean_square(&self) -> f64 {
        self.mean * self.mean + self.variance()
    }

    /// Population variance, clamped at zero.
    pub fn variance(&self) -> f64 {
        (self.m2 / self.count as f64).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn recent_history(&self) -> Option<&VecDeque<f64>> {
        self.history.as_ref().map(|(h, _)| h)
    }

    /// The value the next record would produce, without advancing.
    pub fn next_value(&self, offset: f64, p: &WeightParams) -> f64 {
        p.alpha * offset + p.beta * self.last + p.gamma * self.mean() + p.delta * self.std_dev()
    }

    /// Appends a value to the history.
    pub fn push(&mut self, value: f64) {
        self.count += 1;
        self.last = value;
        self.sum += value;
        self.sum_sq += value * value;
        let d = value - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (value - self.mean);
        if let Some((h, cap)) = &mut self.history {
            if *cap > 0 {
                if h.len() == *cap {
                    h.pop_front();
                }
                h.push_back(value);
            }
        }
    }
}

/// Applies one record's offset and returns the new trust value.
pub fn update_trust(state: &mut TrustState, offset: f64, params: &WeightParams) -> f64 {
    let t = state.next_value(offset, params);
    state.push(t);
    t
}

/// `T'` for the current history, `None` when the radicand is negative.
pub fn convergence_value(state: &TrustState, offset: f64, params: &WeightParams) -> Option<f64> {
    let radicand = state.mean_square() - (params.alpha * offset / params.delta).powi(2);
    (radicand >= 0.0).then(|| radicand.sqrt())
}

/// Whether `sum(T^2) >= n alpha^2 S^2 / delta^2`.
pub fn convergence_feasible(state: &TrustState, offset: f64, params: &WeightParams) -> bool {
    let rhs = state.count as f64 * (params.alpha * offset / params.delta).powi(2);
    state.sum_sq >= rhs
}

/// Convergence error `lambda = T - T'`.
pub fn offset_error(t_n: f64, t_prime: f64) -> f64 {
    t_n - t_prime
}

/// `kappa = lambda / S`, undefined for a zero offset.
pub fn kappa_of(lambda: f64, offset: f64) -> Option<f64> {
    (offset > 0.0).then(|| lambda / offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub lambda: f64,
    pub kappa: Option<f64>,
}

impl ErrorStats {
    pub fn of(t_n: f64, t_prime: f64, offset: f64) -> Self {
        let lambda = offset_error(t_n, t_prime);
        Self { lambda, kappa: kappa_of(lambda, offset) }
    }
}

/// One step of a trust trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// Records applied so far.
    pub n: usize,
    pub t: f64,
    pub t_prime: Option<f64>,
    pub offset: f64,
}

impl TrajectoryPoint {
    pub fn lambda(&self) -> Option<f64> {
        self.t_prime.map(|tp| offset_error(self.t, tp))
    }

    pub fn kappa(&self) -> Option<f64> {
        self.lambda().and_then(|l| kappa_of(l, self.offset))
    }
}

/// Mean kappa over points with `n > burn_in` where it is defined.
pub fn estimate_kappa(run: &[TrajectoryPoint], burn_in: usize) -> Result<f64, TrustError> {
    let (sum, count) = run
        .iter()
        .filter(|p| p.n > burn_in)
        .filter_map(TrajectoryPoint::kappa)
        .fold((0.0, 0usize), |(s, c), k| (s + k, c + 1));
    if count == 0 {
        return Err(TrustError::EmptyTail(burn_in));
    }
    Ok(sum / count as f64)
}

/// Writes `n,T,Tprime,lambda,kappa`; undefined cells are left empty.
pub fn write_trajectory_csv<W: std::io::Write>(points: &[TrajectoryPoint], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "T", "Tprime", "lambda", "kappa"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        out.write_record([p.n.to_string(), p.t.to_string(), opt(p.t_prime), opt(p.lambda()), opt(p.kappa())])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const G1: WeightParams = WeightParams { alpha: 0.05, beta: 0.5, gamma: 0.5, delta: -0.5, t0: 0.1 };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn split_examples() {
        let r = OffsetRatio::default();
        let s = split_offset(5.0, 10.0, r).unwrap();
        assert!(close(s.s_s, 1.0 / 12.0, 1e-15) && close(s.s_o, 0.25, 1e-15) && close(s.s_e, 1.0 / 6.0, 1e-15));
        assert_eq!(split_offset(0.0, 10.0, r).unwrap(), TrustOffsetSplit::default());
        let s = split_offset(10.0, 10.0, r).unwrap();
        assert!(close(s.s_s, 1.0 / 6.0, 1e-15) && close(s.s_o, 0.5, 1e-15) && close(s.s_e, 1.0 / 3.0, 1e-15));
        assert!(close(s.total(), 1.0, 1e-12));
        assert!(split_offset(11.0, 10.0, r).is_err());
        assert!(split_offset(-1.0, 10.0, r).is_err());
        assert!(split_offset(1.0, 0.0, r).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(OffsetRatio::parse("1:3:2").unwrap(), OffsetRatio::default());
        assert!(OffsetRatio::parse("1:0:2").is_err());
        assert!(OffsetRatio::parse("1:2").is_err());
        assert!(OffsetRatio::parse("a:b:c").is_err());
    }

    #[test]
    fn params_constraints() {
        assert!(WeightParams::new(0.05, 0.5, 0.5, -0.5, 0.1).is_ok());
        assert!(WeightParams::new(0.0, 0.5, 0.5, -0.5, 0.1).is_err());
        assert!(WeightParams::new(0.05, 0.6, 0.5, -0.5, 0.1).is_err());
        assert!(WeightParams::new(0.05, 0.5, 0.5, 0.5, 0.1).is_err());
        assert!(WeightParams::new(0.05, 1.0, 0.0, -0.5, 0.1).is_err());
    }

    // Hand evaluation: n=1 -> std 0; n=2 -> mean 0.10625, std 0.00625.
    #[test]
    fn update_hand_values() {
        let mut st = TrustState::seeded(0.1);
        let t1 = update_trust(&mut st, 0.25, &G1);
        assert!(close(t1, 0.1125, 1e-15));
        assert!(close(st.mean(), 0.10625, 1e-15));
        assert!(close(st.std_dev(), 0.00625, 1e-15));
        let t2 = update_trust(&mut st, 0.25, &G1);
        assert!(close(t2, 0.11875, 1e-15));
        assert_eq!(st.count(), 3);
        assert_eq!(st.last(), t2);
    }

    #[test]
    fn zero_offset_constant_history_is_fixed_point() {
        for c in [0.0, 0.1, 0.37, 0.9] {
            let mut st = TrustState::seeded(c);
            for _ in 0..5 {
                assert!(close(update_trust(&mut st, 0.0, &G1), c, 1e-15));
            }
        }
    }

    #[test]
    fn convergence_value_hand_value() {
        let st = TrustState::from_history(&[0.1, 0.1125]).unwrap();
        let tp = convergence_value(&st, 0.25, &G1).unwrap();
        assert!(close(tp, (0.011328125f64 - 0.000625).sqrt(), 1e-15));
        assert!(close(tp, 0.103456, 1e-6));
        let rms = ((0.01f64 + 0.01265625) / 2.0).sqrt();
        assert!(close(convergence_value(&st, 0.0, &G1).unwrap(), rms, 1e-15));
        let small = TrustState::seeded(0.001);
        assert_eq!(convergence_value(&small, 0.5, &G1), None);
    }

    #[test]
    fn feasibility() {
        let small = TrustState::seeded(0.001);
        assert!(!convergence_feasible(&small, 0.5, &G1));
        assert!(convergence_feasible(&small, 0.0, &G1));
        assert!(convergence_feasible(&TrustState::seeded(0.1), 0.5, &G1));
    }

    #[test]
    fn error_terms() {
        assert_eq!(offset_error(0.5, 0.5), 0.0);
        assert_eq!(kappa_of(0.01, 0.0), None);
        assert!(close(kappa_of(0.01, 0.2).unwrap(), 0.05, 1e-15));
        let e = ErrorStats::of(0.3, 0.25, 0.5);
        assert!(close(e.lambda, 0.05, 1e-15) && close(e.kappa.unwrap(), 0.1, 1e-14));
    }

    #[test]
    fn kappa_estimate() {
        let pts: Vec<TrajectoryPoint> = (1..=3)
            .map(|n| TrajectoryPoint { n, t: 0.15, t_prime: Some(0.1), offset: 1.0 })
            .collect();
        assert!(close(estimate_kappa(&pts, 0).unwrap(), 0.05, 1e-15));
        assert_eq!(estimate_kappa(&pts, BURN_IN), Err(TrustError::EmptyTail(BURN_IN)));
    }

    #[test]
    fn bounded_history() {
        let mut st = TrustState::seeded_with_history(0.1, 3);
        for v in [0.2, 0.3, 0.4] {
            st.push(v);
        }
        let h: Vec<f64> = st.recent_history().unwrap().iter().copied().collect();
        assert_eq!(h, vec![0.2, 0.3, 0.4]);
        assert_eq!(st.count(), 4);
        assert!(TrustState::from_history(&[]).is_none());
    }

    #[test]
    fn trajectory_csv_layout() {
        let pts = [
            TrajectoryPoint { n: 1, t: 0.2, t_prime: Some(0.1), offset: 0.5 },
            TrajectoryPoint { n: 2, t: 0.2, t_prime: None, offset: 0.5 },
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,T,Tprime,lambda,kappa");
        assert_eq!(lines[1], "1,0.2,0.1,0.1,0.2");
        assert_eq!(lines[2], "2,0.2,,,");
    }
}
