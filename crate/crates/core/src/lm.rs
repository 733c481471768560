//! Unfolded iteratively-reweighted Levenberg-Marquardt refiner.
//!
//! Each layer linearizes the reprojection residuals at the current pose,
//! weights correspondence `i` by `w_i = 1 / max(|r_i|, floor)^alpha`, and
//! solves
//!
//! ```text
//! (J^T W J + lambda diag(J^T W J)) delta = -J^T W r
//! ```
//!
//! before stepping `pose += gamma * delta` in `(t, omega)` coordinates. The
//! refiner always runs exactly `m` layers.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_linearization, rodrigues_with_derivatives, Correspondence, Pose};
use crate::preprocess::ProblemInstance;
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const DEFAULT_LAYERS: usize = 10;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 2.0;
/// Number of damping increases tried when the normal matrix is not positive definite.
pub const SINGULAR_RETRIES: usize = 3;

/// Per-layer hyperparameters of the unfolded refiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LMConfig {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weight_floor: f64,
}

impl LMConfig {
    /// `m` layers sharing the same hyperparameters.
    pub fn uniform(m: usize, alpha: f64, gamma: f64, lambda: f64) -> Self {
        Self {
            alpha: vec![alpha; m],
            gamma: vec![gamma; m],
            lambda: vec![lambda; m],
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        }
    }

    /// Robustness exponent ramping linearly from `start` to `end` across the layers.
    pub fn alpha_ramp(m: usize, start: f64, end: f64, gamma: f64, lambda: f64) -> Self {
        let mut cfg = Self::uniform(m, start, gamma, lambda);
        for (j, a) in cfg.alpha.iter_mut().enumerate() {
            let s = if m > 1 { j as f64 / (m - 1) as f64 } else { 1.0 };
            *a = start + (end - start) * s;
        }
        cfg
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.alpha.len();
        if m == 0 {
            return Err(Error::InvalidConfig("refiner needs at least one layer".into()));
        }
        if self.gamma.len() != m || self.lambda.len() != m {
            return Err(Error::InvalidConfig(format!(
                "per-layer lengths differ: alpha {m}, gamma {}, lambda {}",
                self.gamma.len(),
                self.lambda.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.alpha) || !finite(&self.gamma) || !finite(&self.lambda) {
            return Err(Error::InvalidConfig("non-finite hyperparameter".into()));
        }
        if self.alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidConfig("alpha must be >= 0".into()));
        }
        if self.gamma.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidConfig("gamma must be > 0".into()));
        }
        if self.lambda.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(Error::InvalidConfig("weight_floor must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for LMConfig {
    fn default() -> Self {
        Self::uniform(DEFAULT_LAYERS, 1.0, 0.5, 1e-3)
    }
}

/// Outcome of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerStatus {
    Ok,
    /// The normal matrix stayed singular after every damping increase; the
    /// layer passed its input pose through.
    Singular,
    /// A point reached the camera plane; the layer passed its input pose through.
    DegenerateDepth,
}

/// Diagnostics of one refinement. `poses`, `weighted_sq_residuals` and
/// `weights` hold `m + 1` entries: entry `j < m` is evaluated at the input
/// of layer `j` with that layer's `alpha`, entry `m` at the output pose with
/// the last layer's `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct LMTrace {
    pub poses: Vec<Pose>,
    pub weighted_sq_residuals: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub status: Vec<LayerStatus>,
}

impl LMTrace {
    pub fn any_failed(&self) -> bool {
        self.status.iter().any(|s| *s != LayerStatus::Ok)
    }
}

#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub pose: Pose,
    /// Weights and weighted squared residual at the input pose.
    pub weights: Vec<f64>,
    pub weighted_sq_residual: f64,
    pub singular: bool,
}

/// IRLS weight of one correspondence from its squared residual norm.
#[inline]
fn weight<S: Scalar>(sq_norm: S, alpha: S, floor: S) -> S {
    S::one() / sq_norm.sqrt().max(floor).powf(alpha)
}

/// `w_i = 1 / max(|r_i|, floor)^alpha` for each 2-vector of the stacked residual.
pub fn irls_weights(residuals: &[f64], alpha: f64, weight_floor: f64) -> Vec<f64> {
    residuals
        .chunks_exact(2)
        .map(|r| weight(r[0] * r[0] + r[1] * r[1], alpha, weight_floor))
        .collect()
}

/// In-place Cholesky solve of a 6x6 SPD system. Returns `None` when a pivot
/// is not safely positive.
pub(crate) fn cholesky_solve6<S: Scalar>(a: &[[S; 6]; 6], b: &[S; 6]) -> Option<[S; 6]> {
    let mut l = [[S::zero(); 6]; 6];
    let mut inv_diag = [S::zero(); 6];
    for j in 0..6 {
        let mut s = a[j][j];
        for k in 0..j {
            s -= l[j][k] * l[j][k];
        }
        let pivot = s.to_f64();
        if !(pivot.is_finite() && pivot > 1e-13 * a[j][j].to_f64().abs()) || pivot <= 0.0 {
            return None;
        }
        let d = s.sqrt();
        l[j][j] = d;
        inv_diag[j] = S::one() / d;
        for i in (j + 1)..6 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s * inv_diag[j];
        }
    }
    let mut y = [S::zero(); 6];
    for i in 0..6 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s * inv_diag[i];
    }
    let mut x = [S::zero(); 6];
    for i in (0..6).rev() {
        let mut s = y[i];
        for k in (i + 1)..6 {
            s -= l[k][i] * x[k];
        }
        x[i] = s * inv_diag[i];
    }
    Some(x)
}

pub(crate) struct Step<S> {
    pub params: [S; 6],
    pub weighted_sq: S,
    pub singular: bool,
}

/// One reweighted, damped Gauss-Newton step from `params = (t, omega)`.
/// Weights at the input pose are written to `weights_out` when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lm_step<S: Scalar>(
    params: &[S; 6],
    f: S,
    corrs: &[Correspondence],
    alpha: S,
    gamma: S,
    lambda: S,
    floor: S,
    mut weights_out: Option<&mut Vec<f64>>,
) -> Result<Step<S>> {
    let t = [params[0], params[1], params[2]];
    let (r, dr) = rodrigues_with_derivatives(&[params[3], params[4], params[5]]);

    let mut h = [[S::zero(); 6]; 6];
    let mut g = [S::zero(); 6];
    let mut weighted_sq = S::zero();
    if let Some(w) = weights_out.as_deref_mut() {
        w.clear();
    }
    for (i, c) in corrs.iter().enumerate() {
        let (res, jac) = point_linearization(&r, &dr, &t, f, c, i)?;
        let sq = res[0] * res[0] + res[1] * res[1];
        let w = weight(sq, alpha, floor);
        if let Some(out) = weights_out.as_deref_mut() {
            out.push(w.to_f64());
        }
        weighted_sq += w * sq;
        for row in 0..2 {
            let mut wj = [S::zero(); 6];
            for c in 0..6 {
                wj[c] = w * jac[row][c];
            }
            for c in 0..6 {
                for d in c..6 {
                    h[c][d] += wj[c] * jac[row][d];
                }
                g[c] += wj[c] * res[row];
            }
        }
    }
    for c in 0..6 {
        for d in 0..c {
            h[c][d] = h[d][c];
        }
    }
    let rhs = [-g[0], -g[1], -g[2], -g[3], -g[4], -g[5]];

    let mut damping = lambda;
    for attempt in 0..=SINGULAR_RETRIES {
        let mut a = h;
        for c in 0..6 {
            a[c][c] += damping * h[c][c];
        }
        if let Some(delta) = cholesky_solve6(&a, &rhs) {
            let mut out = *params;
            for k in 0..6 {
                out[k] += gamma * delta[k];
            }
            return Ok(Step {
                params: out,
                weighted_sq,
                singular: false,
            });
        }
        if attempt < SINGULAR_RETRIES {
            let bumped = damping.to_f64() * 10.0;
            damping = S::from_f64(bumped.max(1e-9));
        }
    }
    Ok(Step {
        params: *params,
        weighted_sq,
        singular: true,
    })
}

/// One refiner layer in `f64`.
pub fn lm_layer(
    pose: &Pose,
    inst: &ProblemInstance,
    alpha: f64,
    gamma: f64,
    lambda: f64,
    weight_floor: f64,
) -> Result<LayerOutput> {
    let mut weights = Vec::with_capacity(inst.n());
    let step = lm_step(
        &pose.params(),
        inst.intrinsics.f,
        &inst.corrs,
        alpha,
        gamma,
        lambda,
        weight_floor,
        Some(&mut weights),
    )?;
    Ok(LayerOutput {
        pose: Pose::from_params(&step.params),
        weights,
        weighted_sq_residual: step.weighted_sq,
        singular: step.singular,
    })
}

fn weighted_sq_at(pose: &Pose, inst: &ProblemInstance, alpha: f64, floor: f64) -> (f64, Vec<f64>) {
    match crate::geometry::residuals(pose, &inst.intrinsics, &inst.corrs) {
        Ok(r) => {
            let w = irls_weights(r.as_slice(), alpha, floor);
            let s = r
                .as_slice()
                .chunks_exact(2)
                .zip(&w)
                .map(|(ri, wi)| wi * (ri[0] * ri[0] + ri[1] * ri[1]))
                .sum();
            (s, w)
        }
        Err(_) => (f64::INFINITY, vec![0.0; inst.n()]),
    }
}

/// Applies exactly `cfg.m()` layers and records every intermediate.
pub fn refine(pose0: &Pose, inst: &ProblemInstance, cfg: &LMConfig) -> Result<(Pose, LMTrace)> {
    cfg.validate()?;
    let m = cfg.m();
    let mut trace = LMTrace {
        poses: Vec::with_capacity(m + 1),
        weighted_sq_residuals: Vec::with_capacity(m + 1),
        weights: Vec::with_capacity(m + 1),
        status: Vec::with_capacity(m),
    };
    let mut pose = *pose0;
    for j in 0..m {
        trace.poses.push(pose);
        match lm_layer(&pose, inst, cfg.alpha[j], cfg.gamma[j], cfg.lambda[j], cfg.weight_floor) {
            Ok(out) => {
                trace.weighted_sq_residuals.push(out.weighted_sq_residual);
                trace.weights.push(out.weights);
                trace.status.push(if out.singular {
                    LayerStatus::Singular
                } else {
                    LayerStatus::Ok
                });
                pose = out.pose;
            }
            Err(_) => {
                let (s, w) = weighted_sq_at(&pose, inst, cfg.alpha[j], cfg.weight_floor);
                trace.weighted_sq_residuals.push(s);
                trace.weights.push(w);
                trace.status.push(LayerStatus::DegenerateDepth);
            }
        }
    }
    let (s, w) = weighted_sq_at(&pose, inst, cfg.alpha[m - 1], cfg.weight_floor);
    trace.poses.push(pose);
    trace.weighted_sq_residuals.push(s);
    trace.weights.push(w);
    Ok((pose, trace))
}

/// Trace-free refinement, generic over the scalar type. Layers that fail
/// pass their input through, exactly as in [`refine`].
pub(crate) fn refine_params<S: Scalar>(
    params0: &[S; 6],
    f: S,
    corrs: &[Correspondence],
    cfg: &LMConfig,
) -> [S; 6] {
    let floor = S::from_f64(cfg.weight_floor);
    let mut p = *params0;
    for j in 0..cfg.m() {
        if let Ok(step) = lm_step(
            &p,
            f,
            corrs,
            S::from_f64(cfg.alpha[j]),
            S::from_f64(cfg.gamma[j]),
            S::from_f64(cfg.lambda[j]),
            floor,
            None,
        ) {
            p = step.params;
        }
        // Canonical axis-angle between layers, as `Pose::from_params` does.
        let w = nalgebra::Vector3::new(p[3].to_f64(), p[4].to_f64(), p[5].to_f64());
        if w.norm() > std::f64::consts::PI {
            let c = crate::geometry::Rotation::new(w).omega();
            p[3] = S::from_f64(c.x);
            p[4] = S::from_f64(c.y);
            p[5] = S::from_f64(c.z);
        }
    }
    p
}

/// Final pose of [`refine`] without building the trace.
pub fn refine_pose(pose0: &Pose, inst: &ProblemInstance, cfg: &LMConfig) -> Pose {
    Pose::from_params(&refine_params(&pose0.params(), inst.intrinsics.f, &inst.corrs, cfg))
}
