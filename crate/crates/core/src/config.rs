//! Experiment configuration: a single JSON document with defaults for
//! every hyperparameter, validated before a run starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Fedpob,
    FedpobPref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Synthetic,
    Cached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Inproc,
    Socket,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_nu() -> f64 {
    0.3
}
fn default_comm_threshold() -> f64 {
    10.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_lr() -> f64 {
    0.001
}
fn default_local_iters() -> u32 {
    30
}
fn default_shared_fraction() -> f64 {
    0.5
}
fn default_noise_sigma() -> f64 {
    0.1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Fully resolved experiment description. Serializing it back out gives
/// the provenance echo: every defaulted field appears with its value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub n_agents: u32,
    pub rounds: u64,
    pub d: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Communication threshold for the determinant trigger.
    #[serde(rename = "D", default = "default_comm_threshold")]
    pub comm_threshold: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_local_iters")]
    pub local_iters: u32,
    #[serde(default = "default_shared_fraction")]
    pub shared_fraction: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    pub env: EnvKind,
    #[serde(default)]
    pub arm_table_path: Option<PathBuf>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub theta_star_seed: Option<u64>,
    pub master_seed: u64,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// The fully-resolved config as pretty JSON (the `config.echo.json`
    /// payload).
    pub fn echo_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |field: &'static str, msg: String| Err(ConfigError::Field { field, msg });
        if self.n_agents < 1 {
            return field("n_agents", "must be ≥ 1".into());
        }
        if self.rounds < 1 {
            return field("rounds", "must be ≥ 1".into());
        }
        if self.d < 1 {
            return field("d", "must be ≥ 1".into());
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return field(
                "lambda",
                format!("must be finite and > 0, got {}", self.lambda),
            );
        }
        if !self.nu.is_finite() || self.nu < 0.0 {
            return field("nu", format!("must be finite and ≥ 0, got {}", self.nu));
        }
        if !self.comm_threshold.is_finite() || self.comm_threshold < 0.0 {
            return field(
                "D",
                format!("must be finite and ≥ 0, got {}", self.comm_threshold),
            );
        }
        if !self.delta.is_finite() || self.delta <= 0.0 || self.delta >= 1.0 {
            return field("delta", format!("must be in (0,1), got {}", self.delta));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return field("lr", format!("must be finite and > 0, got {}", self.lr));
        }
        if self.local_iters < 1 {
            return field("local_iters", "must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return field(
                "shared_fraction",
                format!("must be in [0,1], got {}", self.shared_fraction),
            );
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return field(
                "noise_sigma",
                format!("must be finite and ≥ 0, got {}", self.noise_sigma),
            );
        }
        match self.env {
            EnvKind::Synthetic => {
                if self.arm_table_path.is_some() {
                    return field("arm_table_path", "must be absent in synthetic mode".into());
                }
                match self.k {
                    None => return field("k", "required in synthetic mode".into()),
                    Some(k) if k < 1 => return field("k", "must be ≥ 1".into()),
                    _ => {}
                }
                if self.theta_star_seed.is_none() {
                    return field("theta_star_seed", "required in synthetic mode".into());
                }
            }
            EnvKind::Cached => {
                if self.arm_table_path.is_none() {
                    return field("arm_table_path", "required in cached mode".into());
                }
                if self.k.is_some() {
                    return field("k", "must be absent in cached mode".into());
                }
                if self.theta_star_seed.is_some() {
                    return field("theta_star_seed", "must be absent in cached mode".into());
                }
            }
        }
        Ok(())
    }
}
