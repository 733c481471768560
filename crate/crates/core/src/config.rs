//! TOML run configuration shared by the command-line subcommands.
//!
//! ```toml
//! [scenario]
//! n = 9
//! outliers = "uniform"
//!
//! [train]
//! total_updates = 20000
//!
//! [ransac]
//! max_iterations = 200
//!
//! [eval]
//! methods = ["epnp-lm", "ransac", "pnp-net"]
//! t_r = "1deg"
//! t_t = 0.2
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evalbench::{parse_angle, Method, OpsConfig, SuccessCriteria};
use crate::lm::LMConfig;
use crate::opcount::DEFAULT_TRANSCENDENTAL_COST;
use crate::ransac::RansacConfig;
use crate::synthgen::ScenarioConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Angle with a `deg` or `rad` suffix; bare numbers are degrees.
    pub t_r: String,
    pub t_t: f64,
    pub trials: usize,
    pub seed: u64,
    /// Fixed outlier counts for a sweep; empty evaluates the scenario as is.
    pub sweep: Vec<usize>,
    pub transcendental_cost: u64,
    /// Inlier fraction behind RANSAC's expected operation count.
    pub inlier_ratio: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Epnp, Method::EpnpLm, Method::Ransac],
            t_r: "1deg".into(),
            t_t: 0.2,
            trials: 1000,
            seed: 0,
            sweep: Vec::new(),
            transcendental_cost: DEFAULT_TRANSCENDENTAL_COST,
            inlier_ratio: 7.0 / 9.0,
        }
    }
}

impl EvalConfig {
    pub fn criteria(&self) -> Result<SuccessCriteria> {
        SuccessCriteria::new(parse_angle(&self.t_r)?, self.t_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("eval.methods is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("eval.trials must be positive".into()));
        }
        if !(self.inlier_ratio > 0.0 && self.inlier_ratio <= 1.0) {
            return Err(Error::InvalidConfig("eval.inlier_ratio must lie in (0, 1]".into()));
        }
        self.criteria().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub ransac: RansacConfig,
    /// Refiner for the classical methods when no trained weights are given.
    pub lm: Option<LMConfig>,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.ransac.validate()?;
        if let Some(lm) = &self.lm {
            lm.validate()?;
        }
        self.eval.validate()
    }

    pub fn ops_config(&self, m: usize) -> OpsConfig {
        OpsConfig {
            m,
            ransac: self.ransac.clone(),
            inlier_ratio: self.eval.inlier_ratio,
            transcendental_cost: self.eval.transcendental_cost,
        }
    }
}
