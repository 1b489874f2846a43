//! Tool configuration: one JSON document with a section per subsystem;
//! command-line flags override individual fields.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use evrisk_core::event::IntensityDomain;
use evrisk_core::metrics::EvalConfig;
use evrisk_core::pipeline::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertSettings {
    pub threshold: f64,
    pub refractory_us: u64,
    pub domain: IntensityDomain,
    pub noise_rate_hz: f64,
}

impl Default for ConvertSettings {
    fn default() -> Self {
        ConvertSettings {
            threshold: 0.2,
            refractory_us: 0,
            domain: IntensityDomain::Log,
            noise_rate_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub convert: ConvertSettings,
}

impl ToolConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(ToolConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: ToolConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }
}
