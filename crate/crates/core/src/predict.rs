//! Service-satisfaction prediction from the trust states of a requester,
//! provider and service.
//!
//! Inverting the convergence relation `T = T' + kappa S` for each role gives
//!
//! ```text
//! P = sum over x in {s, o, e} of  (-delta / alpha) * s_max * sqrt(mean(T_x^2) - (T_x - kappa S_x)^2)
//! ```
//!
//! A negative radicand for any role makes the prediction undefined; undefined
//! predictions are excluded from error statistics rather than treated as zero.

use crate::trust::{Role, TrustOffsetSplit, TrustState, WeightParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prediction {
    pub value: Option<f64>,
}

impl Prediction {
    pub const UNDEFINED: Prediction = Prediction { value: None };

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }

    /// `omega = score - P`.
    pub fn error(&self, score: f64) -> Option<f64> {
        prediction_error(score, self)
    }
}

/// The contribution of one role, `None` on a negative radicand.
pub fn role_term(state: &TrustState, offset: f64, params: &WeightParams, kappa: f64, s_max: f64) -> Option<f64> {
    let shifted = state.last() - kappa * offset;
    let radicand = state.mean_square() - shifted * shifted;
    (radicand >= 0.0).then(|| (-params.delta / params.alpha) * s_max * radicand.sqrt())
}

/// `states` is indexed by [`Role::index`].
pub fn predict_satisfaction(
    states: [&TrustState; 3],
    offsets: &TrustOffsetSplit,
    params: &WeightParams,
    kappa: f64,
    s_max: f64,
) -> Prediction {
    let mut total = 0.0;
    for role in Role::ALL {
        match role_term(states[role.index()], offsets.get(role), params, kappa, s_max) {
            Some(term) => total += term,
            None => return Prediction::UNDEFINED,
        }
    }
    Prediction { value: Some(total) }
}

pub fn prediction_error(score: f64, pred: &Prediction) -> Option<f64> {
    pred.value.map(|p| score - p)
}

/// Aggregate of prediction errors with undefined predictions counted apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSummary {
    pub defined: usize,
    pub undefined: usize,
    pub within_band: usize,
    pub sum_abs: f64,
    pub band: f64,
}

impl ErrorSummary {
    pub fn new(band: f64) -> Self {
        Self { band, ..Self::default() }
    }

    pub fn add(&mut self, omega: Option<f64>) {
        match omega {
            Some(w) => {
                self.defined += 1;
                self.sum_abs += w.abs();
                if w.abs() <= self.band {
                    self.within_band += 1;
                }
            }
            None => self.undefined += 1,
        }
    }

    /// Fraction of defined errors inside `[-band, band]`.
    pub fn fraction_within(&self) -> f64 {
        if self.defined == 0 {
            0.0
        } else {
            self.within_band as f64 / self.defined as f64
        }
    }

    pub fn mean_abs(&self) -> Option<f64> {
        (self.defined > 0).then(|| self.sum_abs / self.defined as f64)
    }
}
