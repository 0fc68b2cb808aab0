//! Pipeline configuration with flat JSON keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::ThresholdPolicy;
use crate::discovery::DiscoveryConfig;
use crate::rootcause::RootCauseConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Quantile,
    MaxF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Largest lag of the temporal augmentation.
    pub tau: usize,
    /// Cap on candidate parents per target.
    pub k: usize,
    pub alpha: f64,
    pub tdmi_bins: usize,
    pub threshold_policy: PolicyKind,
    pub threshold_quantile: f64,
    pub shapley_budget: usize,
    pub shapley_exact_limit: usize,
    pub normal_window: usize,
    pub horizon: usize,
    pub seed: u64,
    pub template: String,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub cv_folds: usize,
    pub experiments: usize,
    pub defense_samples: usize,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 5,
            k: 10,
            alpha: 0.05,
            tdmi_bins: 16,
            threshold_policy: PolicyKind::Quantile,
            threshold_quantile: 0.995,
            shapley_budget: 2000,
            shapley_exact_limit: 12,
            normal_window: 300,
            horizon: 5,
            seed: 0,
            template: "swat51".into(),
            train_rows: 20_000,
            validation_rows: 30_000,
            cv_folds: 4,
            experiments: 23,
            defense_samples: 64,
            data: None,
            schema: None,
            catalog: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.into(),
            })
        };
        if self.tau < 1 {
            return bad("tau", "must be at least 1");
        }
        if self.k < 1 {
            return bad("k", "must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.tdmi_bins < 2 {
            return bad("tdmi_bins", "must be at least 2");
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return bad("threshold_quantile", "must lie in (0, 1)");
        }
        if self.shapley_budget < 10 {
            return bad("shapley_budget", "must be at least 10");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds", "must be at least 2");
        }
        if self.train_rows <= self.tau * 10 || self.validation_rows <= self.tau * 10 {
            return bad("train_rows", "too few rows for the lag window");
        }
        Ok(())
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            k: self.k,
            alpha: self.alpha,
            bins: self.tdmi_bins,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn threshold(&self) -> ThresholdPolicy {
        match self.threshold_policy {
            PolicyKind::Quantile => ThresholdPolicy::Quantile(self.threshold_quantile),
            PolicyKind::MaxF1 => ThresholdPolicy::MaxF1,
        }
    }

    pub fn root_cause(&self) -> RootCauseConfig {
        RootCauseConfig {
            horizon: self.horizon,
            normal_window: self.normal_window,
            exact_limit: self.shapley_exact_limit,
            budget: self.shapley_budget,
            seed: self.seed,
            ..Default::default()
        }
    }
}
