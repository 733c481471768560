//! End-to-end training of the network and the refiner's hyperparameters.
//!
//! Gradients of the intermediate loss come from exact backpropagation. The
//! final loss depends on the network only through the unfolded refiner, whose
//! sensitivity to the 7 coarse outputs and the `3m` hyperparameters is taken
//! by central differences and chained into the backward pass.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_distance_with_gradient, translation_error, Pose};
use crate::lm::{refine_params, LMConfig};
use crate::mlp::{
    backward_cached, coarse_to_params_generic, coarse_to_pose, coarse_to_pose_jacobian, init_params,
    net_forward_cached, CoarsePose, NetParams,
};
use crate::pipeline::PnpNet;
use crate::preprocess::{canonicalize, ProblemInstance, F_CONST};
use crate::synthgen::{ScenarioConfig, SyntheticStream};
use crate::{Error, Result};

/// Coefficients of the four distance terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub coarse_t: f64,
    pub coarse_r: f64,
    pub refined_t: f64,
    pub refined_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coarse_t: 1.0,
            coarse_r: 1.0,
            refined_t: 1.0,
            refined_r: 1.0,
        }
    }
}

/// Weight on the final loss: zero for the first `warmup` fraction of
/// updates, then a linear ramp to one over the next `ramp` fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    pub warmup: f64,
    pub ramp: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { warmup: 0.3, ramp: 0.4 }
    }
}

impl Curriculum {
    pub fn weight(&self, update: u64, total: u64) -> f64 {
        if total == 0 {
            return 1.0;
        }
        let frac = update as f64 / total as f64;
        if frac < self.warmup {
            0.0
        } else if self.ramp <= 0.0 {
            1.0
        } else {
            ((frac - self.warmup) / self.ramp).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_updates: u64,
    pub learning_rate: f64,
    /// Learning rate at the last update as a fraction of `learning_rate`,
    /// reached by cosine decay. `1.0` keeps the rate constant.
    pub lr_final_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub curriculum: Curriculum,
    pub loss_weights: LossWeights,
    /// Relative step of the central differences through the refiner.
    pub fd_step: f64,
    /// Batch members whose final loss is differentiated through the refiner.
    pub fd_probes: usize,
    /// Per-probe norm cap on final-loss gradients chained through the refiner.
    pub fd_clip: f64,
    pub layers: usize,
    pub init_alpha: f64,
    pub init_gamma: f64,
    pub init_lambda: f64,
    pub weight_floor: f64,
    pub checkpoint_every: u64,
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_updates: 20_000,
            learning_rate: 1e-4,
            lr_final_fraction: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            curriculum: Curriculum::default(),
            loss_weights: LossWeights::default(),
            fd_step: 1e-4,
            fd_probes: 32,
            fd_clip: 1.0,
            layers: crate::lm::DEFAULT_LAYERS,
            init_alpha: 1.0,
            init_gamma: 0.5,
            init_lambda: 1e-3,
            weight_floor: crate::lm::DEFAULT_WEIGHT_FLOOR,
            checkpoint_every: 1000,
            validation_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, update: u64) -> f64 {
        let frac = if self.total_updates == 0 {
            0.0
        } else {
            (update as f64 / self.total_updates as f64).min(1.0)
        };
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.learning_rate * (self.lr_final_fraction + (1.0 - self.lr_final_fraction) * cosine)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        let c = self.curriculum;
        if !(0.0..=1.0).contains(&c.warmup) || !(0.0..=1.0).contains(&c.ramp) {
            return bad("curriculum fractions must lie in [0, 1]");
        }
        let w = self.loss_weights;
        if [w.coarse_t, w.coarse_r, w.refined_t, w.refined_r].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return bad("lr_final_fraction must lie in (0, 1]");
        }
        if !(self.fd_clip > 0.0) {
            return bad("fd_clip must be positive");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if !(self.init_alpha >= 0.0 && self.init_gamma > 0.0 && self.init_lambda >= 0.0 && self.weight_floor > 0.0) {
            return bad("initial hyperparameters out of range");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}

/// The four distances and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coarse_t: f64,
    pub coarse_r: f64,
    pub refined_t: f64,
    pub refined_r: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn intermediate(&self, w: &LossWeights) -> f64 {
        w.coarse_t * self.coarse_t + w.coarse_r * self.coarse_r
    }

    pub fn last(&self, w: &LossWeights) -> f64 {
        w.refined_t * self.refined_t + w.refined_r * self.refined_r
    }
}

pub fn loss(inst: &ProblemInstance, coarse: &Pose, refined: &Pose, w: &LossWeights) -> Result<LossBreakdown> {
    let truth = inst.truth.ok_or(Error::MissingGroundTruth)?;
    let coarse_t = translation_error(coarse, &truth);
    let coarse_r = crate::geometry::rotation_error(coarse, &truth);
    let refined_t = translation_error(refined, &truth);
    let refined_r = crate::geometry::rotation_error(refined, &truth);
    Ok(LossBreakdown {
        coarse_t,
        coarse_r,
        refined_t,
        refined_r,
        total: w.coarse_t * coarse_t + w.coarse_r * coarse_r + w.refined_t * refined_t + w.refined_r * refined_r,
    })
}

/// Gradient of `wt * |t - t*| + wr * d(R(omega), R*)` with respect to `(t, omega)`.
fn pose_loss_gradient(pose: &Pose, truth: &Pose, wt: f64, wr: f64) -> [f64; 6] {
    let dt = pose.t - truth.t;
    let norm = dt.norm();
    let gt = if norm > 0.0 { dt * (wt / norm) } else { Vector3::zeros() };
    let (_, gr) = rotation_distance_with_gradient(&pose.rot, &truth.rot);
    [gt.x, gt.y, gt.z, wr * gr.x, wr * gr.y, wr * gr.z]
}

/// Central-difference sensitivities of the refined `(t, omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    /// `6 x 7`, with respect to the coarse outputs.
    pub coarse: [[f64; 7]; 6],
    pub alpha: Vec<[f64; 6]>,
    pub gamma: Vec<[f64; 6]>,
    pub lambda: Vec<[f64; 6]>,
    /// Set when some perturbed run produced a non-finite pose; its column is zeroed.
    pub masked: bool,
}

fn refined_params(c: &[f64; 7], inst: &ProblemInstance, cfg: &LMConfig) -> [f64; 6] {
    refine_params(&coarse_to_params_generic(c), inst.intrinsics.f, &inst.corrs, cfg)
}

fn step_for(v: f64, fd_step: f64) -> f64 {
    fd_step * v.abs().max(1e-2)
}

pub fn fd_pose_sensitivity(inst: &ProblemInstance, coarse: &CoarsePose, cfg: &LMConfig, fd_step: f64) -> Result<Sensitivity> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidConfig("fd_step must be positive".into()));
    }
    let m = cfg.m();
    let mut masked = false;
    let mut column = |plus: [f64; 6], minus: [f64; 6], h: f64| -> [f64; 6] {
        let col: [f64; 6] = std::array::from_fn(|r| (plus[r] - minus[r]) / (2.0 * h));
        if col.iter().all(|v| v.is_finite()) {
            col
        } else {
            masked = true;
            [0.0; 6]
        }
    };
    let c0 = coarse.to_array();
    let mut wrt_coarse = [[0.0; 7]; 6];
    for k in 0..7 {
        let h = step_for(c0[k], fd_step);
        let (mut cp, mut cm) = (c0, c0);
        cp[k] += h;
        cm[k] -= h;
        let col = column(refined_params(&cp, inst, cfg), refined_params(&cm, inst, cfg), h);
        for r in 0..6 {
            wrt_coarse[r][k] = col[r];
        }
    }
    let mut hyper = |select: fn(&mut LMConfig) -> &mut Vec<f64>| -> Vec<[f64; 6]> {
        (0..m)
            .map(|j| {
                let mut cfg_p = cfg.clone();
                let mut cfg_m = cfg.clone();
                let v = select(&mut cfg_m)[j];
                let h = step_for(v, fd_step);
                select(&mut cfg_p)[j] = v + h;
                select(&mut cfg_m)[j] = v - h;
                column(refined_params(&c0, inst, &cfg_p), refined_params(&c0, inst, &cfg_m), h)
            })
            .collect()
    };
    let alpha = hyper(|c| &mut c.alpha);
    let gamma = hyper(|c| &mut c.gamma);
    let lambda = hyper(|c| &mut c.lambda);
    Ok(Sensitivity {
        coarse: wrt_coarse,
        alpha,
        gamma,
        lambda,
        masked,
    })
}

/// Keeps the gradient of an out-of-range angle only when descent moves it
/// back into `[0, pi]`; otherwise the clamped angle would drift without bound.
fn inward_angle_gradient(theta: f64, g: f64) -> f64 {
    if (theta < 0.0 && g > 0.0) || (theta > std::f64::consts::PI && g < 0.0) {
        0.0
    } else {
        g
    }
}

/// Rescales `v` onto the ball of radius `cap` if it lies outside.
fn clip(v: &mut [f64], cap: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > cap {
        let k = cap / norm;
        v.iter_mut().for_each(|x| *x *= k);
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconstrained per-layer hyperparameters, mapped through softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHyper {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weight_floor: f64,
}

impl RawHyper {
    pub fn from_config(cfg: &LMConfig) -> Self {
        let inv = |v: &Vec<f64>| v.iter().map(|x| softplus_inv(x.max(1e-300))).collect();
        Self {
            alpha: inv(&cfg.alpha),
            gamma: inv(&cfg.gamma),
            lambda: inv(&cfg.lambda),
            weight_floor: cfg.weight_floor,
        }
    }

    pub fn config(&self) -> LMConfig {
        let map = |v: &Vec<f64>| v.iter().map(|x| softplus(*x)).collect();
        LMConfig {
            alpha: map(&self.alpha),
            gamma: map(&self.gamma),
            lambda: map(&self.lambda),
            weight_floor: self.weight_floor,
        }
    }

    fn flatten(&self) -> Vec<f64> {
        [&self.alpha[..], &self.gamma, &self.lambda].concat()
    }

    fn assign(&mut self, flat: &[f64]) {
        let m = self.alpha.len();
        self.alpha.copy_from_slice(&flat[..m]);
        self.gamma.copy_from_slice(&flat[m..2 * m]);
        self.lambda.copy_from_slice(&flat[2 * m..]);
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub update: u64,
    pub hyper: RawHyper,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: u64,
    pub curriculum: f64,
    /// Mean training objective since the previous record.
    pub train_loss: Option<f64>,
    pub heldout_intermediate: f64,
    pub heldout_final: f64,
    pub val_success_net: f64,
    pub val_success_pnpnet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub updates: u64,
    pub wall_clock_secs: f64,
}

/// Held-out metrics of a model on a fixed instance set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub intermediate: f64,
    pub last: f64,
    pub success_net: f64,
    pub success_pnpnet: f64,
}

const VAL_T_R_DEG: f64 = 1.0;
const VAL_T_T: f64 = 0.2;

pub fn validate_model(net: &PnpNet, instances: &[ProblemInstance], w: &LossWeights) -> Result<Validation> {
    let ok = |p: &Pose, t: &Pose| {
        crate::geometry::rotation_error(p, t) < VAL_T_R_DEG.to_radians() && translation_error(p, t) < VAL_T_T
    };
    let mut v = Validation {
        intermediate: 0.0,
        last: 0.0,
        success_net: 0.0,
        success_pnpnet: 0.0,
    };
    for inst in instances {
        let truth = inst.truth.ok_or(Error::MissingGroundTruth)?;
        let coarse = net.solve_coarse(inst)?;
        let refined = net.solve(inst)?;
        let l = loss(inst, &coarse, &refined, w)?;
        v.intermediate += l.intermediate(w);
        v.last += l.last(w);
        v.success_net += f64::from(u8::from(ok(&coarse, &truth)));
        v.success_pnpnet += f64::from(u8::from(ok(&refined, &truth)));
    }
    let k = instances.len().max(1) as f64;
    v.intermediate /= k;
    v.last /= k;
    v.success_net /= k;
    v.success_pnpnet /= k;
    Ok(v)
}

const VALIDATION_STREAM: u64 = u64::MAX;

pub struct Trainer {
    pub tc: TrainConfig,
    pub sc: ScenarioConfig,
    pub params: NetParams,
    pub state: TrainerState,
    validation: Vec<ProblemInstance>,
    pending_loss: (f64, u64),
}

impl Trainer {
    pub fn new(tc: TrainConfig, sc: ScenarioConfig) -> Result<Self> {
        let params = init_params(tc.seed, sc.n);
        let lm = LMConfig {
            weight_floor: tc.weight_floor,
            ..LMConfig::uniform(tc.layers, tc.init_alpha, tc.init_gamma, tc.init_lambda)
        };
        let state = TrainerState {
            update: 0,
            hyper: RawHyper::from_config(&lm),
            adam_m: Vec::new(),
            adam_v: Vec::new(),
        };
        Self::resume(tc, sc, params, state)
    }

    /// Continues from a checkpointed network and optimizer state.
    pub fn resume(tc: TrainConfig, sc: ScenarioConfig, params: NetParams, mut state: TrainerState) -> Result<Self> {
        tc.validate()?;
        sc.validate()?;
        params.validate()?;
        if params.n != sc.n {
            return Err(Error::ShapeMismatch {
                expected: params.n,
                actual: sc.n,
            });
        }
        if state.hyper.alpha.len() != tc.layers {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} refiner layers, config asks for {}",
                state.hyper.alpha.len(),
                tc.layers
            )));
        }
        let dim = params.num_params() + 3 * tc.layers;
        if state.adam_m.is_empty() {
            state.adam_m = vec![0.0; dim];
            state.adam_v = vec![0.0; dim];
        }
        if state.adam_m.len() != dim || state.adam_v.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                actual: state.adam_m.len(),
            });
        }
        let validation = SyntheticStream::with_stream(sc.clone(), VALIDATION_STREAM)?
            .take_instances(tc.validation_size)?
            .iter()
            .map(|i| canonicalize(i, F_CONST))
            .collect::<Result<_>>()?;
        Ok(Self {
            tc,
            sc,
            params,
            state,
            validation,
            pending_loss: (0.0, 0),
        })
    }

    pub fn lm_config(&self) -> LMConfig {
        self.state.hyper.config()
    }

    pub fn model(&self) -> PnpNet {
        PnpNet::new(self.params.clone(), self.lm_config())
    }

    pub fn update(&self) -> u64 {
        self.state.update
    }

    pub fn validation_set(&self) -> &[ProblemInstance] {
        &self.validation
    }

    pub fn batch(&self, update: u64) -> Result<Vec<ProblemInstance>> {
        SyntheticStream::with_stream(self.sc.clone(), update + 1)?
            .take_instances(self.tc.batch_size)?
            .iter()
            .map(|i| canonicalize(i, F_CONST))
            .collect()
    }

    /// Objective value and gradient (network parameters, then raw
    /// hyperparameters) for the batch of `update`.
    pub fn gradient(&self, update: u64) -> Result<(f64, Vec<f64>)> {
        let batch = self.batch(update)?;
        let w = self.tc.loss_weights;
        let cw = self.tc.curriculum.weight(update, self.tc.total_updates);
        let lm = self.lm_config();
        let m = lm.m();
        let probes = if cw > 0.0 { self.tc.fd_probes.min(batch.len()) } else { 0 };
        let inv_b = 1.0 / batch.len() as f64;
        let inv_p = if probes > 0 { 1.0 / probes as f64 } else { 0.0 };

        let mut grads = NetParams::zeros(self.params.n);
        let mut g_hyper = vec![0.0; 3 * m];
        let mut objective = 0.0;
        for (i, inst) in batch.iter().enumerate() {
            let truth = inst.truth.ok_or(Error::MissingGroundTruth)?;
            let (coarse, cache) = net_forward_cached(&self.params, inst)?;
            let pose_c = coarse_to_pose(&coarse);
            let jc = coarse_to_pose_jacobian(&coarse);
            let g6 = pose_loss_gradient(&pose_c, &truth, w.coarse_t, w.coarse_r);
            let mut up = [0.0; 7];
            for (k, u) in up.iter_mut().enumerate() {
                *u = inv_b * (0..6).map(|r| jc[r][k] * g6[r]).sum::<f64>();
            }
            objective += inv_b * (w.coarse_t * translation_error(&pose_c, &truth)
                + w.coarse_r * crate::geometry::rotation_error(&pose_c, &truth));

            if i < probes {
                let refined = Pose::from_params(&refined_params(&coarse.to_array(), inst, &lm));
                let sens = fd_pose_sensitivity(inst, &coarse, &lm, self.tc.fd_step)?;
                let gf = pose_loss_gradient(&refined, &truth, cw * w.refined_t, cw * w.refined_r);
                objective += inv_p * cw * (w.refined_t * translation_error(&refined, &truth)
                    + w.refined_r * crate::geometry::rotation_error(&refined, &truth));
                let mut gc: [f64; 7] = std::array::from_fn(|k| (0..6).map(|r| sens.coarse[r][k] * gf[r]).sum());
                clip(&mut gc, self.tc.fd_clip);
                for (u, g) in up.iter_mut().zip(&gc) {
                    *u += inv_p * g;
                }
                let dot = |col: &[f64; 6]| col.iter().zip(&gf).map(|(a, b)| a * b).sum::<f64>();
                let raw = &self.state.hyper;
                let mut gh = vec![0.0; 3 * m];
                for j in 0..m {
                    gh[j] = dot(&sens.alpha[j]) * sigmoid(raw.alpha[j]);
                    gh[m + j] = dot(&sens.gamma[j]) * sigmoid(raw.gamma[j]);
                    gh[2 * m + j] = dot(&sens.lambda[j]) * sigmoid(raw.lambda[j]);
                }
                clip(&mut gh, self.tc.fd_clip);
                for (a, g) in g_hyper.iter_mut().zip(&gh) {
                    *a += inv_p * g;
                }
            }
            up[6] = inward_angle_gradient(coarse.theta, up[6]);
            backward_cached(&self.params, &cache, &up, &mut grads);
        }
        let mut flat = grads.flatten();
        flat.extend_from_slice(&g_hyper);
        Ok((objective, flat))
    }

    /// One Adam update. On a non-finite objective or gradient the state is left untouched.
    pub fn step(&mut self) -> Result<f64> {
        let update = self.state.update;
        let (objective, grad) = self.gradient(update)?;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { update });
        }
        let mut theta = self.params.flatten();
        theta.extend(self.state.hyper.flatten());
        let tc = &self.tc;
        let t = (update + 1) as i32;
        let c1 = 1.0 - tc.beta1.powi(t);
        let c2 = 1.0 - tc.beta2.powi(t);
        let lr = tc.learning_rate_at(update);
        for (k, g) in grad.iter().enumerate() {
            let m = &mut self.state.adam_m[k];
            let v = &mut self.state.adam_v[k];
            *m = tc.beta1 * *m + (1.0 - tc.beta1) * g;
            *v = tc.beta2 * *v + (1.0 - tc.beta2) * g * g;
            theta[k] -= lr * (*m / c1) / ((*v / c2).sqrt() + tc.epsilon);
        }
        let split = self.params.num_params();
        self.params.assign_flat(&theta[..split])?;
        self.state.hyper.assign(&theta[split..]);
        self.state.update += 1;
        self.pending_loss.0 += objective;
        self.pending_loss.1 += 1;
        Ok(objective)
    }

    pub fn evaluate(&self) -> Result<TrainRecord> {
        let v = validate_model(&self.model(), &self.validation, &self.tc.loss_weights)?;
        let (sum, count) = self.pending_loss;
        Ok(TrainRecord {
            update: self.state.update,
            curriculum: self.tc.curriculum.weight(self.state.update, self.tc.total_updates),
            train_loss: (count > 0).then(|| sum / count as f64),
            heldout_intermediate: v.intermediate,
            heldout_final: v.last,
            val_success_net: v.success_net,
            val_success_pnpnet: v.success_pnpnet,
        })
    }

    /// Trains until `total_updates`, calling `on_record` at every checkpoint
    /// (and once at update 0 for a fresh run).
    pub fn run(&mut self, on_record: impl FnMut(&Trainer, &TrainRecord) -> Result<()>) -> Result<TrainReport> {
        self.run_until(self.tc.total_updates, on_record)
    }

    /// Like [`run`](Self::run) but stops once `stop` updates are done. The
    /// schedules still follow `total_updates`, so a later resume continues
    /// exactly where this run left off.
    pub fn run_until(
        &mut self,
        stop: u64,
        mut on_record: impl FnMut(&Trainer, &TrainRecord) -> Result<()>,
    ) -> Result<TrainReport> {
        let stop = stop.min(self.tc.total_updates);
        let start = std::time::Instant::now();
        let mut records = Vec::new();
        if self.state.update == 0 {
            let r = self.evaluate()?;
            on_record(self, &r)?;
            records.push(r);
        }
        while self.state.update < stop {
            self.step()?;
            let u = self.state.update;
            if u % self.tc.checkpoint_every == 0 || u == stop {
                let r = self.evaluate()?;
                self.pending_loss = (0.0, 0);
                on_record(self, &r)?;
                records.push(r);
            }
        }
        Ok(TrainReport {
            records,
            updates: self.state.update,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// Fresh training run.
pub fn train(tc: TrainConfig, sc: ScenarioConfig) -> Result<(NetParams, LMConfig, TrainReport)> {
    let mut trainer = Trainer::new(tc, sc)?;
    let report = trainer.run(|_, _| Ok(()))?;
    Ok((trainer.params.clone(), trainer.lm_config(), report))
}
