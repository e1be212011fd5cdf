//! Training configuration: defaults, JSON loading, and validation.

use std::path::{Path, PathBuf};

use avitopics::avijst::PiSampling;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Avitm,
    Aviad,
    Avijst,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Avitm => "avitm",
            ModelKind::Aviad => "aviad",
            ModelKind::Avijst => "avijst",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must not be negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("{field} must be at least {min}, got {value}")]
    TooSmall {
        field: &'static str,
        min: usize,
        value: usize,
    },
    #[error("hidden layer sizes must be nonempty and positive, got {0:?}")]
    BadHidden(Vec<usize>),
    #[error("{field} path is not set")]
    MissingPath { field: &'static str },
    #[error("{field} file does not exist: {path}")]
    FileNotFound { field: &'static str, path: PathBuf },
    #[error("aviad requires a seed file (set `seeds`)")]
    AviadNeedsSeeds,
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub k: usize,
    /// Sentiment count; only read by avijst.
    pub s: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_seed: f64,
    pub lambda_nu: f64,
    pub lr: f64,
    pub classifier_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub pi_sampling: PiSampling,
    /// Compute NPMI on the training corpus every this many epochs; 0 disables.
    pub npmi_every: usize,
    pub npmi_top_n: usize,
    /// Single-threaded, seeded, 64-bit. The only mode currently implemented;
    /// kept as a switch so configs stay forward-compatible.
    pub deterministic: bool,
    pub corpus: PathBuf,
    pub labels: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub vocab: PathBuf,
    pub output: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Avitm,
            k: 3,
            s: 2,
            alpha: 0.1,
            gamma: 1.0,
            lambda_seed: 1.0,
            lambda_nu: 1.0,
            lr: 0.001,
            classifier_lr: 0.005,
            batch_size: 256,
            epochs: 50,
            seed: 42,
            hidden: vec![100, 100],
            pi_sampling: PiSampling::Deterministic,
            npmi_every: 0,
            npmi_top_n: 10,
            deterministic: true,
            corpus: PathBuf::new(),
            labels: None,
            seeds: None,
            vocab: PathBuf::new(),
            output: PathBuf::new(),
        }
    }
}

/// Environment variable overriding `deterministic` ("1"/"true"/"0"/"false").
pub const DETERMINISTIC_ENV: &str = "AVITOPICS_DETERMINISTIC";

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn apply_env(&mut self) {
        if let Ok(value) = std::env::var(DETERMINISTIC_ENV) {
            match value.as_str() {
                "1" | "true" => self.deterministic = true,
                "0" | "false" => self.deterministic = false,
                other => log::warn!("ignoring {DETERMINISTIC_ENV}={other}"),
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &'static str, value: f64) -> Result<(), ConfigError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::NonPositive { field, value })
            }
        }
        fn non_negative(field: &'static str, value: f64) -> Result<(), ConfigError> {
            if value >= 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Negative { field, value })
            }
        }
        if self.k < 1 {
            return Err(ConfigError::TooSmall {
                field: "k",
                min: 1,
                value: self.k,
            });
        }
        let min_s = if self.model == ModelKind::Avijst { 2 } else { 1 };
        if self.s < min_s {
            return Err(ConfigError::TooSmall {
                field: "s",
                min: min_s,
                value: self.s,
            });
        }
        if self.batch_size < 1 {
            return Err(ConfigError::TooSmall {
                field: "batch_size",
                min: 1,
                value: self.batch_size,
            });
        }
        if self.epochs < 1 {
            return Err(ConfigError::TooSmall {
                field: "epochs",
                min: 1,
                value: self.epochs,
            });
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(ConfigError::BadHidden(self.hidden.clone()));
        }
        positive("alpha", self.alpha)?;
        positive("gamma", self.gamma)?;
        positive("lr", self.lr)?;
        positive("classifier_lr", self.classifier_lr)?;
        non_negative("lambda_seed", self.lambda_seed)?;
        non_negative("lambda_nu", self.lambda_nu)?;

        for (field, path) in [("corpus", &self.corpus), ("vocab", &self.vocab)] {
            if path.as_os_str().is_empty() {
                return Err(ConfigError::MissingPath { field });
            }
            if !path.exists() {
                return Err(ConfigError::FileNotFound {
                    field,
                    path: path.clone(),
                });
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(ConfigError::MissingPath { field: "output" });
        }
        for (field, path) in [("labels", &self.labels), ("seeds", &self.seeds)] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(ConfigError::FileNotFound {
                        field,
                        path: path.clone(),
                    });
                }
            }
        }
        if self.model == ModelKind::Aviad && self.seeds.is_none() {
            return Err(ConfigError::AviadNeedsSeeds);
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}
