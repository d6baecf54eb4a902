//! Experiment configuration: flat `key=value` settings layered as
//! defaults < config file < command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dbloss_core::data::known_dataset;
use dbloss_core::model::DEFAULT_SMA_KERNEL;
use dbloss_core::{DbLossConfig, LossKind, ModelConfig, ModelKind, SmoothingFactor, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every accepted key, in the order they are written back out.
pub const KEYS: [&str; 17] = [
    "dataset_name",
    "data",
    "split",
    "benchmark_length",
    "lookback",
    "horizon",
    "model",
    "sma_kernel",
    "loss",
    "alpha",
    "beta",
    "epsilon",
    "lr",
    "epochs",
    "patience",
    "batch_size",
    "seed",
];

/// Keys that take comma-separated lists in a benchmark sweep.
pub const SWEEP_KEYS: [&str; 5] = ["horizon", "loss", "alpha", "beta", "seed"];

pub const DATA_DIR_ENV: &str = "DBLOSS_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{key}' (valid keys: {})", KEYS.join(", "))]
    UnknownKey { key: String },

    #[error("invalid value '{value}' for '{key}': {reason}")]
    BadValue { key: String, value: String, reason: String },

    #[error("missing '{key}': {hint}")]
    Missing { key: String, hint: String },

    #[error("{path}:{line}: expected key=value, found '{text}'")]
    Syntax { path: String, line: usize, text: String },

    #[error("sweep list for '{key}' is empty")]
    EmptySweep { key: String },

    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path} is not a valid result or config document: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// A fully resolved experiment: every default materialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub data: PathBuf,
    pub split: SplitSpec,
    pub benchmark_length: Option<usize>,
    pub lookback: usize,
    pub horizon: usize,
    pub model: ModelKind,
    pub sma_kernel: usize,
    pub loss: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            sma_kernel: self.sma_kernel,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            db: DbLossConfig {
                alpha: SmoothingFactor::new(self.alpha).expect("alpha validated on resolve"),
                beta: self.beta,
                epsilon: self.epsilon,
            },
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    /// The same configuration as settings, so a stored result can seed a new run.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        let mut put = |k: &str, v: String| {
            s.values.insert(k.to_string(), v);
        };
        put("dataset_name", self.dataset_name.clone());
        put("data", self.data.display().to_string());
        put("split", format!("{}:{}:{}", self.split.train, self.split.val, self.split.test));
        put(
            "benchmark_length",
            self.benchmark_length.map_or("none".into(), |n| n.to_string()),
        );
        put("lookback", self.lookback.to_string());
        put("horizon", self.horizon.to_string());
        put("model", self.model.to_string());
        put("sma_kernel", self.sma_kernel.to_string());
        put("loss", self.loss.to_string());
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("epsilon", self.epsilon.to_string());
        put("lr", self.lr.to_string());
        put("epochs", self.epochs.to_string());
        put("patience", self.patience.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        s
    }
}

/// Raw `key → value` strings; later layers overwrite earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { key: key.to_string() });
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    /// Parses a `key=value` file; blank lines and `#` comments are skipped.
    pub fn parse_kv(text: &str, origin: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: origin.to_string(),
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    /// Reads either a `key=value` file or a JSON document: a stored result
    /// (its `config` is reused) or a bare resolved config.
    pub fn from_file(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: origin.clone(),
            source,
        })?;
        if !text.trim_start().starts_with('{') {
            return Self::parse_kv(&text, &origin);
        }
        let json = |source| ConfigError::Json {
            path: origin.clone(),
            source,
        };
        let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
        let cfg = match doc.get_mut("config") {
            Some(c) => c.take(),
            None => doc,
        };
        let cfg: ExperimentConfig = serde_json::from_value(cfg).map_err(json)?;
        Ok(cfg.to_settings())
    }

    /// Expands comma lists in [`SWEEP_KEYS`] into one settings value per
    /// combination, in horizon × loss × alpha × beta × seed order.
    pub fn expand_sweep(&self) -> Result<Vec<Settings>> {
        let mut runs = vec![self.clone()];
        for key in SWEEP_KEYS {
            let Some(raw) = self.get(key) else { continue };
            let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if items.is_empty() {
                return Err(ConfigError::EmptySweep { key: key.to_string() });
            }
            runs = runs
                .into_iter()
                .flat_map(|base| {
                    items.iter().map(move |item| {
                        let mut s = base.clone();
                        s.values.insert(key.to_string(), item.to_string());
                        s
                    })
                })
                .collect();
        }
        Ok(runs)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Resolves defaults, the dataset path and known-dataset protocol.
    /// Returns the config plus any warnings (e.g. a clamped α).
    pub fn resolve(&self, data_dir: Option<&Path>) -> Result<(ExperimentConfig, Vec<String>)> {
        let bad = |key: &str, value: &dyn Display, reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let mut warnings = Vec::new();

        let data_flag = self.get("data").filter(|s| !s.is_empty()).map(PathBuf::from);
        let dataset_name = match (self.get("dataset_name"), &data_flag) {
            (Some(n), _) if !n.is_empty() => n.to_string(),
            (_, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            _ => {
                return Err(ConfigError::Missing {
                    key: "dataset_name".into(),
                    hint: "pass --dataset-name or --data".into(),
                })
            }
        };
        let data = data_flag.unwrap_or_else(|| {
            let file = format!("{dataset_name}.csv");
            match data_dir {
                Some(dir) => dir.join(file),
                None => Path::new("data").join(file),
            }
        });

        let known = known_dataset(&dataset_name);
        let split = match self.get("split") {
            Some(v) => SplitSpec::parse(v).map_err(|e| bad("split", &v, &e.to_string()))?,
            None => match known {
                Some((_, s)) => s,
                None => {
                    return Err(ConfigError::Missing {
                        key: "split".into(),
                        hint: format!("'{dataset_name}' is not a known dataset; pass --split a:b:c"),
                    })
                }
            },
        };
        let benchmark_length = match self.get("benchmark_length") {
            Some("none") | Some("all") => None,
            Some(_) => Some(self.or("benchmark_length", 0usize)?),
            None => known.map(|(len, _)| len),
        };
        if benchmark_length == Some(0) {
            return Err(bad("benchmark_length", &0, "must be positive"));
        }

        let lookback = self.or("lookback", 96usize)?;
        let horizon = self.or("horizon", 96usize)?;
        for (k, v) in [("lookback", lookback), ("horizon", horizon)] {
            if v == 0 {
                return Err(bad(k, &v, "must be positive"));
            }
        }
        let model: ModelKind = self.or("model", ModelKind::DLinear)?;
        let sma_kernel = self.or("sma_kernel", DEFAULT_SMA_KERNEL)?;
        if sma_kernel % 2 == 0 {
            return Err(bad("sma_kernel", &sma_kernel, "must be odd"));
        }
        let loss: LossKind = self.or("loss", LossKind::DbLoss)?;

        let raw_alpha = self.or("alpha", DbLossConfig::DEFAULT_ALPHA)?;
        let alpha = SmoothingFactor::new(raw_alpha)
            .map_err(|e| bad("alpha", &raw_alpha, &e.to_string()))?
            .get();
        if SmoothingFactor::needs_clamp(raw_alpha) {
            warnings.push(format!(
                "alpha {raw_alpha} is outside [{}, {}]; clamped to {alpha}",
                SmoothingFactor::MIN,
                SmoothingFactor::MAX
            ));
        }
        let beta = self.or("beta", DbLossConfig::DEFAULT_BETA)?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(bad("beta", &beta, "must lie in [0, 1]"));
        }
        let epsilon = self.or("epsilon", DbLossConfig::DEFAULT_EPSILON)?;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(bad("epsilon", &epsilon, "must be positive"));
        }

        let defaults = TrainConfig::default();
        let lr = self.or("lr", defaults.learning_rate)?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(bad("lr", &lr, "must be positive"));
        }
        let epochs = self.or("epochs", defaults.max_epochs)?;
        if epochs == 0 {
            return Err(bad("epochs", &epochs, "must be at least 1"));
        }
        let patience = self.or("patience", defaults.patience)?;
        let batch_size = self.or("batch_size", defaults.batch_size)?;
        if batch_size == 0 {
            return Err(bad("batch_size", &batch_size, "must be at least 1"));
        }
        let seed = self.or("seed", defaults.seed)?;

        let cfg = ExperimentConfig {
            dataset_name,
            data,
            split,
            benchmark_length,
            lookback,
            horizon,
            model,
            sma_kernel,
            loss,
            alpha,
            beta,
            epsilon,
            lr,
            epochs,
            patience,
            batch_size,
            seed,
        };
        Ok((cfg, warnings))
    }
}
