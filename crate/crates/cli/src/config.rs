//! Experiment configuration: JSON schema, validation, canonical hashing.

use qsd_core::OffspringDistribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::CliError;

/// One experiment run, as read from the `--config` JSON file. Every field a
/// given experiment does not use may be omitted; [`validate`] enforces the
/// per-experiment requirements. The seed must come from the file or from
/// `--seed`; there is no wall-clock fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring: Option<OffspringDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub time_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Absorption-rate parameters for the `family` experiment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thetas: Vec<f64>,
    /// Two starting trees (canonical encodings) for `uniqueness-bpg`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_encodings: Vec<String>,
    /// Two starting configurations (site, count) for `uniqueness-brw`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_configs: Vec<Vec<(Vec<i32>, u32)>>,
    /// Alternation target for `gevents`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternations: Option<u8>,
    /// Jump-count threshold for `walker`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_jumps: Option<u32>,
    /// Simulated horizon for `qprocess`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_time: Option<f64>,
}

pub const EXPERIMENTS: [&str; 8] = [
    "yaglom",
    "uniqueness-bpg",
    "uniqueness-brw",
    "gevents",
    "walker",
    "qprocess",
    "spectral",
    "family",
];

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} does not match the config schema: {e}", path.display())))
}

impl ExperimentConfig {
    /// Schema checks shared by every experiment plus the per-experiment
    /// field requirements. `invoked` is the subcommand name, which must
    /// agree with the file to stop accidental config swaps.
    pub fn validate(&self, invoked: &str) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return fail(format!("unknown experiment {:?}", self.experiment));
        }
        if self.experiment != invoked {
            return fail(format!(
                "config is for experiment {:?} but {:?} was invoked",
                self.experiment, invoked
            ));
        }
        if self.seed.is_none() {
            return fail("seed is mandatory: set it in the config or pass --seed".into());
        }
        if !self.time_grid.iter().all(|t| t.is_finite() && *t >= 0.0) {
            return fail("time grid entries must be finite and nonnegative".into());
        }
        if !self.time_grid.windows(2).all(|w| w[0] < w[1]) {
            return fail("time grid must be strictly increasing".into());
        }
        if self.replicas == Some(0) {
            return fail("replicas must be at least 1".into());
        }
        if let Some(p) = self.particles {
            if p < 2 {
                return fail("particles must be at least 2".into());
            }
        }
        if let Some(n) = self.truncation {
            if n < 2 {
                return fail("truncation must be at least 2".into());
            }
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l < 1.0) {
                return fail("lambda must lie strictly between 0 and 1".into());
            }
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "experiment {:?} requires {what}",
                    self.experiment
                )))
            }
        };
        match self.experiment.as_str() {
            "yaglom" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(!self.time_grid.is_empty(), "a nonempty time grid")?;
                need(self.particles.is_some(), "a particle count")?;
                need(self.truncation.is_some(), "a truncation size")?;
            }
            "uniqueness-bpg" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(!self.time_grid.is_empty(), "a nonempty time grid")?;
                need(self.particles.is_some(), "a particle count")?;
                need(
                    self.initial_encodings.len() == 2,
                    "exactly two initial tree encodings",
                )?;
                for enc in &self.initial_encodings {
                    qsd_core::bpg::RootedTree::from_encoding(enc).map_err(|e| {
                        CliError::Config(format!("initial encoding {enc:?} is invalid: {e}"))
                    })?;
                }
            }
            "uniqueness-brw" => {
                need(self.lambda.is_some(), "lambda")?;
                need(self.d.is_some(), "a lattice dimension")?;
                need(!self.time_grid.is_empty(), "a nonempty time grid")?;
                need(self.particles.is_some(), "a particle count")?;
                need(
                    self.initial_configs.len() == 2,
                    "exactly two initial configurations",
                )?;
                let d = self.d.unwrap_or(1);
                for sites in &self.initial_configs {
                    qsd_core::brw::LatticeConfig::new(d, sites).map_err(|e| {
                        CliError::Config(format!("initial configuration is invalid: {e}"))
                    })?;
                }
            }
            "gevents" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(!self.time_grid.is_empty(), "a nonempty time grid")?;
                need(self.particles.is_some(), "a particle count")?;
                need(self.truncation.is_some(), "a truncation size")?;
                need(self.alternations.unwrap_or(3) >= 1, "alternations >= 1")?;
            }
            "walker" => {
                need(self.lambda.is_some(), "lambda")?;
                need(self.d.is_some(), "a lattice dimension")?;
                need(!self.time_grid.is_empty(), "a nonempty time grid")?;
                need(self.replicas.is_some(), "a replica count")?;
            }
            "qprocess" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(self.truncation.is_some(), "a truncation size")?;
                need(
                    self.total_time.map(|t| t > 0.0).unwrap_or(false),
                    "a positive total_time",
                )?;
            }
            "spectral" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(self.truncation.is_some(), "a truncation size")?;
            }
            "family" => {
                need(self.offspring.is_some(), "an offspring law")?;
                need(self.truncation.is_some(), "a truncation size")?;
                need(!self.thetas.is_empty(), "a nonempty thetas list")?;
            }
            _ => unreachable!("validated above"),
        }
        Ok(())
    }

    /// Hash of the canonical config JSON with the seed removed, so runs of
    /// the same experiment under different seeds share a hash. Object keys
    /// are sorted by the JSON layer, making the bytes canonical.
    pub fn hash_without_seed(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("seed");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
