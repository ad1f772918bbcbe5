//! Flat `key = value` configuration.
//!
//! Recognised keys: `alpha`, `beta`, `gamma`, `delta`, `t0`, `mu`, `nu`,
//! `epsilon`, `tau`, `ratio`. Blank lines and `#` comments are ignored.

use std::path::Path;

use thiserror::Error;

use crate::control::{ControlError, Thresholds};
use crate::trust::{OffsetRatio, TrustError, WeightParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    Value { line: usize, key: String, value: String },
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Config {
    pub params: WeightParams,
    pub thresholds: Thresholds,
    pub ratio: OffsetRatio,
    /// Whether `mu` or `nu` were given explicitly.
    pub thresholds_overridden: bool,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::Value { line, key: key.into(), value: value.into() };
            let real = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
            match key {
                "alpha" => cfg.params.alpha = real()?,
                "beta" => cfg.params.beta = real()?,
                "gamma" => cfg.params.gamma = real()?,
                "delta" => cfg.params.delta = real()?,
                "t0" => cfg.params.t0 = real()?,
                "mu" => {
                    cfg.thresholds.mu = real()?;
                    cfg.thresholds_overridden = true;
                }
                "nu" => {
                    cfg.thresholds.nu = real()?;
                    cfg.thresholds_overridden = true;
                }
                "epsilon" => cfg.thresholds.epsilon = real()?,
                "tau" => cfg.thresholds.tau = value.parse().map_err(|_| bad())?,
                "ratio" => cfg.ratio = OffsetRatio::parse(value)?,
                other => return Err(ConfigError::UnknownKey { line, key: other.into() }),
            }
        }
        cfg.params.validate()?;
        cfg.thresholds.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
