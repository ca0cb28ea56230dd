//! Versioned TOML experiment configuration.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so that typos do not silently fall back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cpfreeze_core::attack::AttackConfig;
use cpfreeze_core::PostProcess;

use crate::defense::{RobosacConfig, SweepGrid};
use crate::experiment::PoseNoise;
use crate::timing::TimingPlan;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub attack: AttackConfig,
    pub postprocess: PostProcess,
    pub timing: TimingPlan,
    pub metrics: MetricsConfig,
    pub warp: WarpConfig,
    pub robosac: RobosacConfig,
    pub ablation: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            attack: AttackConfig::default(),
            postprocess: PostProcess::default(),
            timing: TimingPlan::default(),
            metrics: MetricsConfig::default(),
            warp: WarpConfig::default(),
            robosac: RobosacConfig::default(),
            ablation: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Latency above which a frame counts as a successful attack, seconds.
    pub asr_threshold_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { asr_threshold_s: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    /// Noise on the victim pose used to derive the warp; off by default.
    pub pose_noise: PoseNoise,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version { found: self.schema_version });
        }
        self.attack.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.postprocess;
        if !(0.0..=1.0).contains(&p.score_threshold) || !(0.0..=1.0).contains(&p.iou_threshold) {
            return Err(ConfigError::Invalid("postprocess thresholds must lie in [0, 1]".into()));
        }
        if self.timing.repetitions == 0 {
            return Err(ConfigError::Invalid("timing.repetitions must be at least 1".into()));
        }
        if !(self.metrics.asr_threshold_s > 0.0) {
            return Err(ConfigError::Invalid("metrics.asr_threshold_s must be positive".into()));
        }
        let n = &self.warp.pose_noise;
        if !(n.xy_std_m >= 0.0 && n.yaw_std_rad >= 0.0 && n.xy_std_m.is_finite() && n.yaw_std_rad.is_finite()) {
            return Err(ConfigError::Invalid("warp.pose_noise deviations must be finite and non-negative".into()));
        }
        if self.robosac.iterations == 0 {
            return Err(ConfigError::Invalid("robosac.iterations must be at least 1".into()));
        }
        Ok(())
    }
}
