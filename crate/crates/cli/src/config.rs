//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wz_core::geometry::ConeCoverCertificate;
use wz_core::harness::Problem;
use wz_core::{CoefficientSet, DomainSpec, HolderTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Slopes a `converge` run must reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Minimum fixed-time (`t = T`) strong-error slope, per moment order.
    pub rate_slope: f64,
    /// Minimum slope of `E[f_n(T)]`.
    pub lyapunov_slope: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rate_slope: 0.4,
            lyapunov_slope: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderOptions {
    pub target: HolderTarget,
    pub p_list: Vec<u32>,
    pub lag_levels: (u32, u32),
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self {
            target: HolderTarget::Reference,
            p_list: vec![2, 4],
            lag_levels: (3, 8),
        }
    }
}

fn default_levels() -> Vec<u32> {
    (4..=9).collect()
}

fn default_p_list() -> Vec<f64> {
    vec![2.0]
}

fn default_paths() -> usize {
    2000
}

fn default_substeps() -> usize {
    8
}

fn default_fine_margin() -> u32 {
    4
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub coefficients: CoefficientSet,
    pub x0: Vec<f64>,
    pub horizon: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<u32>,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_substeps")]
    pub substeps_per_knot: usize,
    #[serde(default = "default_fine_margin")]
    pub fine_margin: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default = "yes")]
    pub deterministic_reduction: bool,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub lyapunov_r: Option<f64>,
    #[serde(default)]
    pub holder: HolderOptions,
    #[serde(default)]
    pub certificate: Option<ConeCoverCertificate>,
}

/// A configuration problem, reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parses JSON; serde's messages carry the field name and line/column.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level checks beyond the schema.
    pub fn validate(&self) -> Result<Problem, ConfigError> {
        let problem = Problem::new(
            self.domain.clone(),
            self.coefficients.clone(),
            self.x0.clone(),
            self.horizon,
        )
        .map_err(|e| ConfigError(format!("config: {e}")))?;
        if self.levels.is_empty() {
            return Err(ConfigError(
                "config: field `levels` must be nonempty".into(),
            ));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError(
                "config: field `levels` must be strictly increasing".into(),
            ));
        }
        if self.paths < 1 {
            return Err(ConfigError(
                "config: field `paths` must be at least 1".into(),
            ));
        }
        Ok(problem)
    }
}
