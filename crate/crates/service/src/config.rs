//! Service configuration: a TOML file plus environment overrides.
//!
//! Relative paths in the file are resolved against the file's directory.
//! `TRIAGE_BIND` overrides `bind` and `TRIAGE_MODEL_PATH` overrides
//! `model_path`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use triage_core::features::VocabularySettings;
use triage_core::trainer::{ClassWeights, OptimizerConfig, TrainingConfig};
use triage_core::triage::{Thresholds, TriageError, DEFAULT_RETRAIN_THRESHOLD};

pub const BIND_ENV: &str = "TRIAGE_BIND";
pub const MODEL_PATH_ENV: &str = "TRIAGE_MODEL_PATH";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Thresholds(#[from] TriageError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSettings {
    #[serde(default = "default_red")]
    pub red: f64,
    #[serde(default = "default_yellow")]
    pub yellow: f64,
}

fn default_red() -> f64 {
    Thresholds::default().red()
}

fn default_yellow() -> f64 {
    Thresholds::default().yellow()
}

impl Default for ThresholdSettings {
    fn default() -> Self {
        ThresholdSettings { red: default_red(), yellow: default_yellow() }
    }
}

/// A search engine served from a canned results fixture.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EngineSettings {
    pub name: String,
    pub fixture: PathBuf,
    pub pages: Option<usize>,
    /// Requests per second; 0 disables throttling. Defaults to 1.
    pub rate_limit: Option<f64>,
}

/// Training hyperparameters shared by `train` and service retraining.
/// Defaults are the linear-model preset: the paper recipe with peak LR 1e-2.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub seed: u64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub positive_weight: f64,
    pub negative_weight: f64,
    pub min_df: usize,
    pub max_features: Option<usize>,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let o = OptimizerConfig::linear_preset();
        let t = TrainingConfig::default();
        let v = VocabularySettings::default();
        TrainingSettings {
            seed: t.seed,
            peak_lr: o.peak_lr,
            warmup_steps: o.warmup_steps,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            validate_every: t.validate_every,
            patience: t.patience,
            positive_weight: t.class_weights.positive,
            negative_weight: t.class_weights.negative,
            min_df: v.min_df,
            max_features: v.max_features,
            ngram_min: v.ngram_range.0,
            ngram_max: v.ngram_range.1,
        }
    }
}

impl TrainingSettings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            validate_every: self.validate_every,
            patience: self.patience,
            class_weights: ClassWeights { positive: self.positive_weight, negative: self.negative_weight },
            seed: self.seed,
            ..TrainingConfig::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: 0,
        }
    }

    pub fn vocabulary(&self) -> VocabularySettings {
        VocabularySettings {
            min_df: self.min_df,
            max_features: self.max_features,
            ngram_range: (self.ngram_min, self.ngram_max),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Model bundle directory (`vocab.tsv` + `model.txt`). May be absent at
    /// startup, in which case inquiries get 503 until a model exists.
    pub model_path: PathBuf,
    pub lexicon_path: Option<PathBuf>,
    pub journal_path: PathBuf,
    /// Labeled base set (single-file layout) that feedback is merged into.
    pub training_data: Option<PathBuf>,
    /// Labeled validation set for retraining. Without it, 10% of the merged
    /// set is held out.
    pub validation_data: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: ThresholdSettings,
    #[serde(default = "default_retrain_threshold")]
    pub retrain_threshold: usize,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    pub pages_per_query: Option<usize>,
    #[serde(default)]
    pub engines: Vec<EngineSettings>,
    #[serde(default)]
    pub training: TrainingSettings,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_retrain_threshold() -> usize {
    DEFAULT_RETRAIN_THRESHOLD
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl ServiceConfig {
    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ServiceConfig = toml::from_str(text)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.model_path);
        resolve(&mut cfg.journal_path);
        for p in [&mut cfg.lexicon_path, &mut cfg.training_data, &mut cfg.validation_data].into_iter().flatten() {
            resolve(p);
        }
        for e in &mut cfg.engines {
            resolve(&mut e.fixture);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies `TRIAGE_BIND` and `TRIAGE_MODEL_PATH` from `lookup`.
    pub fn apply_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(bind) = lookup(BIND_ENV) {
            self.bind = bind;
        }
        if let Some(model) = lookup(MODEL_PATH_ENV) {
            self.model_path = PathBuf::from(model);
        }
        self
    }

    pub fn apply_env(self) -> Self {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    pub fn thresholds(&self) -> Result<Thresholds, ConfigError> {
        Ok(Thresholds::new(self.thresholds.red, self.thresholds.yellow)?)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    /// Checks every referenced input path. The model path is exempt (see
    /// the field docs); the journal is created on first write but its
    /// directory must exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds()?;
        if self.retrain_threshold == 0 || self.request_timeout_ms == 0 {
            return Err(ConfigError::Invalid("retrain_threshold and request_timeout_ms must be positive".into()));
        }
        let must_exist = |what: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath { what, path: p.to_path_buf() })
            }
        };
        if let Some(p) = &self.lexicon_path {
            must_exist("lexicon", p)?;
        }
        if let Some(p) = &self.training_data {
            must_exist("training data", p)?;
        }
        if let Some(p) = &self.validation_data {
            must_exist("validation data", p)?;
        }
        let journal_dir = self.journal_path.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(dir) = journal_dir {
            must_exist("journal directory", dir)?;
        }
        for e in &self.engines {
            must_exist("engine fixture", &e.fixture)?;
        }
        Ok(())
    }
}
