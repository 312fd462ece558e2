//! Versioned TOML run configuration.
//!
//! ```toml
//! format_version = 1
//!
//! [schedule]
//! steps = 1000
//!
//! [refinement]
//! n = 100
//! search_radius = 10
//! apply_ground_fix = true
//! default_tolerance = 0.85
//!
//! [training]
//! steps = 3000
//! learning_rate = 1e-3
//! [training.net]
//! hidden = 256
//! depth = 4
//!
//! [benchmark]
//! seed = 0
//! count = 50
//! ```

use std::path::Path;

use blockdetail::detailing::RefinementConfig;
use blockdetail::diffusion::train::TrainConfig;
use blockdetail::diffusion::{NoiseSchedule, DEFAULT_STEPS};
use blockdetail::eval::BenchmarkSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub schedule: ScheduleConfig,
    pub refinement: RefinementConfig,
    pub training: TrainConfig,
    pub benchmark: BenchmarkSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            schedule: ScheduleConfig::default(),
            refinement: RefinementConfig::default(),
            training: TrainConfig::default(),
            benchmark: BenchmarkSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::validation(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Default configuration when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.format_version != CONFIG_VERSION {
            return Err(CliError::validation(format!(
                "config format_version {} is not supported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        if self.schedule.steps == 0 {
            return Err(CliError::validation("schedule.steps must be at least 1"));
        }
        self.refinement.validate()?;
        self.benchmark.validate()?;
        self.training.net.validate()?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule<f64>, CliError> {
        Ok(NoiseSchedule::cosine(self.schedule.steps)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
