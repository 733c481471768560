//! The full solver: preprocessing, network initialization and unfolded refinement.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::lm::{refine, refine_pose, LMConfig, LMTrace};
use crate::mlp::{coarse_to_pose, net_forward, CoarsePose, NetParams};
use crate::preprocess::{canonicalize, ProblemInstance, F_CONST};
use crate::Result;

/// A trained network together with the refiner it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpNet {
    pub params: NetParams,
    pub lm: LMConfig,
    pub f_const: f64,
}

impl PnpNet {
    pub fn new(params: NetParams, lm: LMConfig) -> Self {
        Self {
            params,
            lm,
            f_const: F_CONST,
        }
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn prepare(&self, inst: &ProblemInstance) -> Result<ProblemInstance> {
        canonicalize(inst, self.f_const)
    }

    /// Raw network outputs for `inst`.
    pub fn coarse(&self, inst: &ProblemInstance) -> Result<CoarsePose> {
        net_forward(&self.params, &self.prepare(inst)?)
    }

    /// The network's pose alone, without refinement.
    pub fn solve_coarse(&self, inst: &ProblemInstance) -> Result<Pose> {
        self.coarse(inst).map(|c| coarse_to_pose(&c))
    }

    pub fn solve(&self, inst: &ProblemInstance) -> Result<Pose> {
        let prepared = self.prepare(inst)?;
        let coarse = coarse_to_pose(&net_forward(&self.params, &prepared)?);
        Ok(refine_pose(&coarse, &prepared, &self.lm))
    }

    /// Coarse pose and the refinement trace.
    pub fn solve_with_trace(&self, inst: &ProblemInstance) -> Result<(Pose, LMTrace)> {
        let prepared = self.prepare(inst)?;
        let coarse = coarse_to_pose(&net_forward(&self.params, &prepared)?);
        refine(&coarse, &prepared, &self.lm)
    }
}
