//! On-disk artifacts shared between pipeline stages.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use causal_twin::detect::ThresholdPolicy;
use causal_twin::Scm;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Calibrated detector state; ties a threshold to the exact model file it
/// was computed with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorArtifact {
    pub scm_sha256: String,
    pub graph_hash: String,
    pub policy: ThresholdPolicy,
    pub threshold: f64,
    /// Per-variable normal score quantile used to pick root candidates.
    pub baseline: Vec<f64>,
}

impl DetectorArtifact {
    pub fn check(&self, scm: &Scm, scm_sha256: &str) -> Result<()> {
        if self.scm_sha256 != scm_sha256 || self.graph_hash != scm.graph_hash() {
            bail!(
                "artifact hash mismatch: detector was calibrated for model {} but got {}",
                short(&self.scm_sha256),
                short(scm_sha256)
            );
        }
        if self.baseline.len() != scm.n_vars() {
            bail!("detector baseline has {} variables, model has {}", self.baseline.len(), scm.n_vars());
        }
        Ok(())
    }
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Ensures a dataset schema lists exactly the model's variables in order.
pub fn check_names(schema_names: &[String], model_names: &[String]) -> Result<()> {
    if schema_names != model_names {
        let first = schema_names
            .iter()
            .zip(model_names)
            .position(|(a, b)| a != b)
            .unwrap_or(schema_names.len().min(model_names.len()));
        bail!(
            "artifact hash mismatch: schema and model disagree on variables ({} vs {}, first difference at column {first})",
            schema_names.len(),
            model_names.len()
        );
    }
    Ok(())
}
