//! Service configuration, read from a TOML file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! store_dir = "rts-store"
//! max_body_bytes = 16777216
//! ui_dir = "webui/dist"
//!
//! [thresholds]
//! adequate = 0.0
//! marginal = 0.1
//!
//! [train]
//! learning_rate = 0.1
//! max_epochs = 500
//! ```

use rts_core::ranker::TrainConfig;
use rts_core::verification::AdequacyThresholds;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub store_dir: PathBuf,
    pub thresholds: AdequacyThresholds,
    pub train: TrainConfig,
    pub max_body_bytes: usize,
    pub max_iterations: u32,
    /// Static assets served under `/ui` when set.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            store_dir: PathBuf::from("rts-store"),
            thresholds: AdequacyThresholds::default(),
            train: TrainConfig::default(),
            max_body_bytes: 16 * 1024 * 1024,
            max_iterations: rts_core::session::DEFAULT_MAX_ITERATIONS,
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.thresholds.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.max_body_bytes == 0 {
            return Err("max_body_bytes must be positive".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        Ok(())
    }
}
