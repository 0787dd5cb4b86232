//! Run configuration: a JSON file whose fields are all optional, overridden
//! field by field from the command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use carfollow_core::filter::FilterConfig;
use carfollow_core::metrics::DEFAULT_BRAKE_THRESHOLD;
use carfollow_core::models::DEFAULT_CONSTANT_ACCELERATION;
use carfollow_core::sim::NonTargetMode;
use carfollow_core::VehicleId;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    /// Worker threads; `None` uses the environment default.
    pub threads: Option<usize>,
    pub filter: FilterConfig,
    pub estimate: EstimateConfig,
    pub benchmark: BenchmarkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// First sample of the observation window.
    pub from: usize,
    /// Number of observed transitions; all remaining ones when absent.
    pub steps: Option<usize>,
    pub targets: TargetSelection,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            from: 0,
            steps: None,
            targets: TargetSelection::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelName>,
    /// Prediction horizon, s. The rollout covers the last `horizon` seconds
    /// of every scenario.
    pub horizon: f64,
    /// Data before the rollout start used for estimation, s.
    pub estimation_window: f64,
    pub targets: TargetSelection,
    /// Hard brake when acceleration < -brake_threshold, m/s².
    pub brake_threshold: f64,
    pub non_targets: NonTargetMode,
    /// Sample the estimated model's acceleration noise; otherwise roll out
    /// its mean.
    pub stochastic: bool,
    pub constant_acceleration: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            models: vec![ModelName::Estimated, ModelName::Default],
            horizon: 5.0,
            estimation_window: 5.0,
            targets: TargetSelection::Count(20),
            brake_threshold: DEFAULT_BRAKE_THRESHOLD,
            non_targets: NonTargetMode::Replay,
            stochastic: true,
            constant_acceleration: DEFAULT_CONSTANT_ACCELERATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Estimated,
    Default,
    NonlinearFit,
    ConstVel,
    ConstAcc,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::Estimated,
        ModelName::Default,
        ModelName::NonlinearFit,
        ModelName::ConstVel,
        ModelName::ConstAcc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Estimated => "estimated",
            ModelName::Default => "default",
            ModelName::NonlinearFit => "nonlinear_fit",
            ModelName::ConstVel => "const_vel",
            ModelName::ConstAcc => "const_acc",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let known: Vec<&str> = ModelName::ALL.iter().map(|m| m.as_str()).collect();
            CliError::usage(format!("unknown model {s:?}, expected one of {}", known.join(", ")))
        })
    }
}

/// Comma-separated model list.
pub fn parse_models(list: &str) -> Result<Vec<ModelName>> {
    let models = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if models.is_empty() {
        return Err(CliError::usage("model list is empty"));
    }
    Ok(models)
}

/// Which vehicles of each scenario are estimated or predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelection {
    All,
    /// This many vehicles drawn at random per scenario (all if fewer).
    Count(usize),
    Ids(Vec<VehicleId>),
}

impl FromStr for TargetSelection {
    type Err = CliError;

    /// `all`, a count such as `20`, or `ids:3,8,11`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(TargetSelection::All);
        }
        if let Some(list) = s.strip_prefix("ids:") {
            let ids = list
                .split(',')
                .map(|x| x.trim().parse::<u64>().map(VehicleId))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::usage(format!("bad vehicle id list {list:?}")))?;
            return Ok(TargetSelection::Ids(ids));
        }
        s.parse::<usize>()
            .map(TargetSelection::Count)
            .map_err(|_| CliError::usage(format!("bad target selection {s:?}, expected all, a count or ids:1,2,3")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        crate::canonical::read_json(path)
    }
}
