//! Experiment configuration, loadable from TOML or JSON.

use crate::calibrate::CalibrationConfig;
use crate::convert::ConversionConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Timesteps at which accuracy is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub timesteps: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            timesteps: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        }
    }
}

/// Top-level config shared by the conversion and calibration commands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub conversion: ConversionConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        self.conversion.validate()?;
        self.calibration.validate()?;
        if self.eval.timesteps.is_empty() {
            return Err(Error::Config("eval.timesteps is empty".into()));
        }
        if !self.eval.timesteps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "eval.timesteps must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Reads a config file, dispatching on the `.toml` / `.json` extension.
    pub fn load(path: &Path) -> Result<AppConfig> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let config: AppConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{display}: {e}")))?,
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{display}: {e}")))?,
            other => {
                return Err(Error::Config(format!(
                    "{display}: unsupported config extension {other:?} (use .toml or .json)"
                )))
            }
        };
        config.validate()?;
        Ok(config)
    }
}
