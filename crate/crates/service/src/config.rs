//! Service configuration, read from a TOML file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "/var/lib/nss"
//! online_reorg = false
//!
//! [[classes]]
//! name = "Normal"
//! color = "#2e7d32"
//! strategy = "none"
//!
//! [[targets]]
//! id = "core-sw"
//! host = "10.0.0.2"
//! if_indexes = [1, 2]
//! ```
//!
//! `NSS_LISTEN` and `NSS_DATA_DIR` override the corresponding keys.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use nss_core::classifier::{TrainParams, UpdateVariant};
use nss_core::store::HistoryConfig;
use nss_core::training::TrainingOptions;
use nss_snmp::{PollOptions, SchedulerConfig, Target};
use serde::{Deserialize, Serialize};

pub const UNIDENTIFIED: &str = "Unidentified";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub name: String,
    #[serde(default = "default_color")]
    pub color: String,
    /// Advisory action recorded with every decision for this class.
    pub strategy: String,
}

fn default_color() -> String {
    "#607d8b".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub delta: f64,
    pub max_passes: usize,
    pub variant: UpdateVariant,
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self { delta: p.delta, max_passes: p.max_passes, variant: p.update_variant, epsilon: p.epsilon, alpha: 1.0 }
    }
}

impl TrainingConfig {
    pub fn options(&self) -> TrainingOptions {
        TrainingOptions {
            params: TrainParams {
                delta: self.delta,
                max_passes: self.max_passes,
                update_variant: self.variant,
                epsilon: self.epsilon,
            },
            alpha: self.alpha,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollConfig {
    pub attempts: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for PollConfig {
    fn default() -> Self {
        Self { attempts: 3, timeout_ms: 2000, max_in_flight: 64, jitter: 0.1, seed: 0 }
    }
}

impl PollConfig {
    pub fn options(&self) -> PollOptions {
        PollOptions { attempts: self.attempts, timeout: std::time::Duration::from_millis(self.timeout_ms) }
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        SchedulerConfig { max_in_flight: self.max_in_flight, jitter: self.jitter, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySettings {
    pub max_records: usize,
    pub segment_records: usize,
}

impl Default for HistorySettings {
    fn default() -> Self {
        let d = HistoryConfig::default();
        Self { max_records: d.max_records, segment_records: d.segment_records }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Static dashboard files served under `/ui`.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// When set, every `/api/v1` request needs `Authorization: Bearer <token>`
    /// (or `?token=` for the event stream).
    #[serde(default)]
    pub api_token: Option<String>,
    #[serde(default)]
    pub online_reorg: bool,
    /// Simulated seconds per real second; 1 outside of tests.
    #[serde(default = "default_scale")]
    pub clock_scale: f64,
    pub classes: Vec<ClassConfig>,
    #[serde(default = "default_unidentified_strategy")]
    pub unidentified_strategy: String,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub poll: PollConfig,
    #[serde(default)]
    pub history: HistorySettings,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("valid literal")
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("nss-data")
}

fn default_scale() -> f64 {
    1.0
}

fn default_unidentified_strategy() -> String {
    "investigate".into()
}

impl ServiceConfig {
    /// A config with the given classes and defaults everywhere else.
    pub fn with_classes(classes: Vec<ClassConfig>) -> Self {
        Self {
            listen: default_listen(),
            data_dir: default_data_dir(),
            ui_dir: None,
            api_token: None,
            online_reorg: false,
            clock_scale: 1.0,
            classes,
            unidentified_strategy: default_unidentified_strategy(),
            targets: Vec::new(),
            training: TrainingConfig::default(),
            poll: PollConfig::default(),
            history: HistorySettings::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("NSS_LISTEN") {
            self.listen = v.parse().map_err(|_| ConfigError::Invalid(format!("NSS_LISTEN: bad address '{v}'")))?;
        }
        if let Some(v) = get("NSS_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.classes.len() < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if c.name.trim().is_empty() {
                return invalid("class names must not be empty".into());
            }
            if c.name.eq_ignore_ascii_case(UNIDENTIFIED) {
                return invalid(format!("'{UNIDENTIFIED}' is reserved"));
            }
            if !names.insert(c.name.as_str()) {
                return invalid(format!("duplicate class '{}'", c.name));
            }
        }
        let mut ids = BTreeSet::new();
        for t in &self.targets {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !ids.insert(t.id.as_str()) {
                return invalid(format!("duplicate target '{}'", t.id));
            }
        }
        if !(self.clock_scale.is_finite() && self.clock_scale > 0.0) {
            return invalid("clock_scale must be positive".into());
        }
        if self.poll.attempts == 0 || self.poll.timeout_ms == 0 {
            return invalid("poll.attempts and poll.timeout_ms must be positive".into());
        }
        self.training.options().params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.training.alpha.is_finite() && self.training.alpha > 0.0) {
            return invalid("training.alpha must be positive".into());
        }
        if self.history.segment_records == 0 || self.history.max_records == 0 {
            return invalid("history limits must be positive".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Strategy for a decided label name, or the Unidentified strategy.
    pub fn strategy_for(&self, label: &str) -> String {
        self.classes
            .iter()
            .find(|c| c.name == label)
            .map(|c| c.strategy.clone())
            .unwrap_or_else(|| self.unidentified_strategy.clone())
    }

    pub fn history_config(&self) -> HistoryConfig {
        HistoryConfig { max_records: self.history.max_records, segment_records: self.history.segment_records }
    }
}
