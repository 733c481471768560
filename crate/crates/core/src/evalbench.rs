//! Success-rate evaluation, outlier sweeps and operation counting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::epnp::{epnp_lm, epnp_solve};
use crate::geometry::{rotation_error, translation_error, Correspondence, Pose};
use crate::lm::{refine_params, LMConfig};
use crate::mlp::{coarse_to_params_generic, forward_generic, layer_shapes, NetParams};
use crate::opcount::{instrument, Counted, OpCount, Tally, DEFAULT_TRANSCENDENTAL_COST};
use crate::pipeline::PnpNet;
use crate::preprocess::ProblemInstance;
use crate::ransac::{ransac_solve, RansacConfig};
use crate::synthgen::{OutlierPolicy, ScenarioConfig, SyntheticStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Network initialization alone.
    Net,
    PnpNet,
    Epnp,
    EpnpLm,
    Ransac,
    /// Returns the ground truth.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Net,
        Method::PnpNet,
        Method::Epnp,
        Method::EpnpLm,
        Method::Ransac,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Net => "net",
            Method::PnpNet => "pnp-net",
            Method::Epnp => "epnp",
            Method::EpnpLm => "epnp-lm",
            Method::Ransac => "ransac",
            Method::Oracle => "oracle",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Net | Method::PnpNet)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = s
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(Method::from_str)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("method list is empty".into()));
    }
    Ok(methods)
}

/// Parses an angle such as `1deg`, `0.02rad` or a bare number of degrees.
/// Returns radians.
pub fn parse_angle(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, to_rad) = if let Some(v) = s.strip_suffix("deg") {
        (v, std::f64::consts::PI / 180.0)
    } else if let Some(v) = s.strip_suffix("rad") {
        (v, 1.0)
    } else {
        (s, std::f64::consts::PI / 180.0)
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * to_rad)
        .map_err(|_| Error::InvalidConfig(format!("cannot parse angle {s:?}")))
}

/// Success thresholds. The rotation threshold is stored in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    pub t_r: f64,
    pub t_t: f64,
}

impl SuccessCriteria {
    pub fn new(t_r: f64, t_t: f64) -> Result<Self> {
        if !(t_r > 0.0 && t_t > 0.0) {
            return Err(Error::InvalidConfig("success thresholds must be positive".into()));
        }
        Ok(Self { t_r, t_t })
    }

    pub fn degrees(t_r_deg: f64, t_t: f64) -> Result<Self> {
        Self::new(t_r_deg.to_radians(), t_t)
    }
}

impl Default for SuccessCriteria {
    /// One degree and 0.2 world units.
    fn default() -> Self {
        Self {
            t_r: 1f64.to_radians(),
            t_t: 0.2,
        }
    }
}

/// Everything a method may need besides the instance.
#[derive(Debug, Clone)]
pub struct Solvers<'a> {
    pub model: Option<&'a PnpNet>,
    /// Refiner used by EPnP-LM and the RANSAC hypotheses.
    pub lm: LMConfig,
    pub ransac: RansacConfig,
}

impl<'a> Solvers<'a> {
    /// Classical methods share the model's refiner when a model is given.
    pub fn new(model: Option<&'a PnpNet>, ransac: RansacConfig) -> Self {
        let lm = model.map_or_else(LMConfig::default, |m| m.lm.clone());
        Self { model, lm, ransac }
    }

    fn model(&self, method: Method) -> Result<&'a PnpNet> {
        self.model
            .ok_or_else(|| Error::InvalidConfig(format!("method {method} needs trained weights")))
    }

    pub fn check(&self, methods: &[Method]) -> Result<()> {
        if methods.is_empty() {
            return Err(Error::InvalidConfig("method list is empty".into()));
        }
        for &m in methods {
            if m.needs_model() {
                self.model(m)?;
            }
        }
        self.lm.validate()?;
        self.ransac.validate()
    }

    /// Solves `inst` with `method`. `trial` decorrelates the RANSAC sampler
    /// across instances.
    pub fn solve(&self, method: Method, inst: &ProblemInstance, trial: u64) -> Result<Pose> {
        match method {
            Method::Net => self.model(method)?.solve_coarse(inst),
            Method::PnpNet => self.model(method)?.solve(inst),
            Method::Epnp => epnp_solve(inst),
            Method::EpnpLm => epnp_lm(inst, &self.lm),
            Method::Ransac => {
                let cfg = RansacConfig {
                    seed: self.ransac.seed.wrapping_add(trial),
                    ..self.ransac.clone()
                };
                ransac_solve(inst, &cfg, &self.lm)
            }
            Method::Oracle => inst.truth.ok_or(Error::MissingGroundTruth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub outliers: usize,
    /// Degrees.
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    pub rotation_ok: bool,
    pub translation_ok: bool,
    pub success: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub rotation: f64,
    pub translation: f64,
    pub joint: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Option<ScenarioConfig>,
    pub criteria: SuccessCriteria,
    pub trials: usize,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<TrialRecord>,
    /// Worst-case operation count per method at the scenario's `n`.
    pub ops: Vec<(Method, Option<OpCount>)>,
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Joint success rate of `method`, or 0 when it was not evaluated.
    pub fn joint(&self, method: Method) -> f64 {
        self.summary(method).map_or(0.0, |s| s.joint)
    }
}

/// Maps `f` over `items` on all available cores, preserving order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn judge(
    method: Method,
    trial: usize,
    inst: &ProblemInstance,
    result: Result<Pose>,
    criteria: &SuccessCriteria,
) -> TrialRecord {
    let outliers = inst.outlier_count();
    let mut rec = TrialRecord {
        trial,
        method,
        outliers,
        rotation_error: None,
        translation_error: None,
        rotation_ok: false,
        translation_ok: false,
        success: false,
        failure: None,
    };
    match result {
        Err(e) => rec.failure = Some(e.to_string()),
        Ok(pose) if !pose.is_finite() => rec.failure = Some("non-finite pose".into()),
        Ok(pose) => {
            if let Some(truth) = &inst.truth {
                let er = rotation_error(&pose, truth);
                let et = translation_error(&pose, truth);
                rec.rotation_error = Some(er.to_degrees());
                rec.translation_error = Some(et);
                rec.rotation_ok = er < criteria.t_r;
                rec.translation_ok = et < criteria.t_t;
                rec.success = rec.rotation_ok && rec.translation_ok;
            } else {
                rec.failure = Some(Error::MissingGroundTruth.to_string());
            }
        }
    }
    rec
}

/// Evaluates every method on the same instances. Solver failures count as
/// unsuccessful trials.
pub fn evaluate_instances(
    methods: &[Method],
    instances: &[ProblemInstance],
    criteria: &SuccessCriteria,
    solvers: &Solvers,
) -> Result<EvalReport> {
    solvers.check(methods)?;
    if instances.is_empty() {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    if instances.iter().any(|i| i.truth.is_none()) {
        return Err(Error::MissingGroundTruth);
    }
    let per_trial = par_map(instances, |trial, inst| {
        methods
            .iter()
            .map(|&m| judge(m, trial, inst, solvers.solve(m, inst, trial as u64), criteria))
            .collect::<Vec<_>>()
    });
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let trials = instances.len();
    let summaries = methods
        .iter()
        .map(|&m| {
            let rs = records.iter().filter(|r| r.method == m);
            let (mut rot, mut tr, mut joint, mut failures) = (0usize, 0usize, 0usize, 0usize);
            for r in rs {
                rot += usize::from(r.rotation_ok);
                tr += usize::from(r.translation_ok);
                joint += usize::from(r.success);
                failures += usize::from(r.failure.is_some());
            }
            let t = trials as f64;
            MethodSummary {
                method: m,
                rotation: rot as f64 / t,
                translation: tr as f64 / t,
                joint: joint as f64 / t,
                failures,
            }
        })
        .collect();
    let n = instances[0].n();
    let ops_cfg = OpsConfig::from_solvers(solvers);
    let ops = methods.iter().map(|&m| (m, count_ops(m, n, &ops_cfg).ok())).collect();
    Ok(EvalReport {
        scenario: None,
        criteria: *criteria,
        trials,
        summaries,
        records,
        ops,
    })
}

/// Evaluates on `trials` instances drawn from `scenario` under `seed`.
pub fn evaluate(
    methods: &[Method],
    scenario: &ScenarioConfig,
    criteria: &SuccessCriteria,
    trials: usize,
    seed: u64,
    solvers: &Solvers,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    solvers.check(methods)?;
    let scenario = ScenarioConfig {
        seed,
        ..scenario.clone()
    };
    let instances = SyntheticStream::new(scenario.clone())?.take_instances(trials)?;
    let mut report = evaluate_instances(methods, &instances, criteria, solvers)?;
    report.scenario = Some(scenario);
    Ok(report)
}

/// One report per fixed outlier count.
pub fn sweep_outliers(
    methods: &[Method],
    scenario: &ScenarioConfig,
    criteria: &SuccessCriteria,
    counts: &[usize],
    trials: usize,
    seed: u64,
    solvers: &Solvers,
) -> Result<Vec<EvalReport>> {
    if let Some(&k) = counts.iter().find(|&&k| k > scenario.n) {
        return Err(Error::InvalidConfig(format!("outlier count {k} exceeds n = {}", scenario.n)));
    }
    counts
        .iter()
        .map(|&k| {
            let sc = ScenarioConfig {
                outliers: OutlierPolicy::Fixed(k),
                ..scenario.clone()
            };
            evaluate(methods, &sc, criteria, trials, seed, solvers)
        })
        .collect()
}

// Operation counting.
//
// The refiner and the network are counted from closed-form per-stage tallies
// that match the instrumented `Counted` runs exactly on the generic path
// (rotation angle above the small-angle cutoff, first Cholesky attempt
// succeeds). EPnP relies on iterative dense factorizations, which are
// charged with the usual flop estimates: `9d^3` for a symmetric
// eigendecomposition of order `d` and `4p^2q + 8pq^2 + 9q^3` for an SVD of a
// `p x q` matrix with both factors, split evenly between additions and
// multiplications. Focal normalization and sorting are not counted.

#[derive(Debug, Clone, PartialEq)]
pub struct OpsConfig {
    /// Refiner depth.
    pub m: usize,
    pub ransac: RansacConfig,
    /// Inlier fraction used for RANSAC's expected iteration count.
    pub inlier_ratio: f64,
    pub transcendental_cost: u64,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self {
            m: LMConfig::default().m(),
            ransac: RansacConfig::default(),
            inlier_ratio: 7.0 / 9.0,
            transcendental_cost: DEFAULT_TRANSCENDENTAL_COST,
        }
    }
}

impl OpsConfig {
    pub fn from_solvers(s: &Solvers) -> Self {
        Self {
            m: s.lm.m(),
            ransac: s.ransac.clone(),
            ..Default::default()
        }
    }
}

/// Rotation matrix and its three derivative matrices.
const RODRIGUES_WITH_DERIVATIVES: Tally = Tally::new(117, 183, 3, 3);
/// Rotation matrix alone.
const RODRIGUES: Tally = Tally::new(24, 30, 2, 3);
/// Residual and 2x6 Jacobian of one correspondence.
const POINT_LINEARIZATION: Tally = Tally::new(35, 53, 1, 0);
/// IRLS weight and accumulation into the normal equations.
const POINT_ACCUMULATION: Tally = Tally::new(56, 69, 1, 2);
/// Damping, 6x6 Cholesky solve and the damped step.
const LAYER_SOLVE: Tally = Tally::new(65 + 12, 92 + 12, 6, 6);

/// One refiner layer over `n` correspondences.
pub fn refine_layer_tally(n: usize) -> Tally {
    RODRIGUES_WITH_DERIVATIVES + (POINT_LINEARIZATION + POINT_ACCUMULATION).scaled(n as u64) + LAYER_SOLVE
}

pub fn refine_tally(n: usize, m: usize) -> Tally {
    refine_layer_tally(n).scaled(m as u64)
}

pub fn net_tally(n: usize) -> Tally {
    let macs: usize = layer_shapes(n).iter().map(|(i, o)| i * o).sum();
    // input scaling, translation scaling, axis-angle conversion
    Tally::fma(macs as u64) + Tally::new(0, 5 * n as u64 + 3, 0, 0) + Tally::new(2, 6, 1, 1)
}

fn flops(f: u64) -> Tally {
    Tally::new(f / 2, f - f / 2, 0, 0)
}

fn sym_eigen(d: u64) -> Tally {
    flops(9 * d * d * d)
}

fn svd(p: u64, q: u64) -> Tally {
    let (p, q) = if p >= q { (p, q) } else { (q, p) };
    flops(4 * p * p * q + 8 * p * q * q + 9 * q * q * q)
}

/// SVD followed by a least-squares back substitution.
fn svd_solve(p: u64, q: u64) -> Tally {
    svd(p, q) + Tally::fma(p * q + q * q) + Tally::new(0, 0, q, 0)
}

/// Model of a non-planar EPnP solve: four control points, three kernel
/// vectors and three beta candidates.
pub fn epnp_tally(n: usize) -> Tally {
    let n = n as u64;
    let k = 4u64;
    let dims = 3u64;
    let pairs = k * (k - 1) / 2;
    let dot = Tally::new(9, 3, 0, 0);

    let frame = Tally::new(3 * n, 0, 3, 0)
        + Tally::new(3 * n, 0, 0, 0)
        + Tally::fma(6 * n)
        + sym_eigen(3)
        + Tally::new(9, 9, 12, 3)
        + Tally::new(16 * n, 9 * n, 0, 0);
    let kernel = Tally::new(0, 2 * k * n, 2 * n, 0)
        + Tally::fma(2 * n * 9 * k * k)
        + sym_eigen(3 * k)
        + Tally::new(3 * pairs, 0, 0, 0)
        + Tally::fma(3 * pairs);
    let betas = dot.scaled(pairs)
        + Tally::fma(2 * pairs)
        + Tally::new(0, 0, 1, 1)
        + dot.scaled(3 * pairs)
        + Tally::new(0, pairs, 0, 0)
        + svd_solve(pairs, 3)
        + Tally::new(0, 0, 0, 2)
        + dot.scaled(5 * pairs)
        + Tally::new(0, 3 * pairs, 0, 0)
        + svd_solve(pairs, 5)
        + Tally::new(0, 0, 1, 2);
    let per_pair = Tally::new(3 * dims, 0, 0, 0) + Tally::fma(3 * dims) + Tally::fma(3) + Tally::new(1, 0, 0, 0)
        + (Tally::fma(3) + Tally::new(0, 1, 0, 0)).scaled(dims);
    let polish = (per_pair.scaled(pairs) + svd_solve(pairs, dims) + Tally::new(dims, 0, 0, 0))
        .scaled(crate::epnp::BETA_POLISH_ITERS as u64);
    let procrustes = Tally::new(6 * k, 0, 6, 0)
        + (Tally::new(6, 0, 0, 0) + Tally::fma(9)).scaled(k)
        + svd(3, 3)
        + Tally::fma(27 + 12 + 27)
        + Tally::new(0, 9, 0, 0)
        + Tally::fma(9)
        + Tally::new(3, 0, 0, 0);
    let to_axis_angle = Tally::new(5, 3, 1, 2);
    let reprojection = RODRIGUES + Tally::new(16, 13, 2, 0).scaled(n);
    let candidate = polish
        + Tally::fma(3 * k * dims)
        + Tally::fma(n * k)
        + procrustes
        + to_axis_angle
        + reprojection;
    frame + kernel + betas + candidate.scaled(3)
}

/// Inlier test of one hypothesis against `n` correspondences.
pub fn score_tally(n: usize) -> Tally {
    RODRIGUES + Tally::new(17, 13, 2, 1).scaled(n as u64)
}

/// RANSAC at a given iteration count, including the final refit on all points.
pub fn ransac_tally(n: usize, iterations: usize, cfg: &OpsConfig) -> Tally {
    let s = cfg.ransac.subset_size;
    let hypothesis = epnp_tally(s) + refine_tally(s, cfg.m) + score_tally(n);
    let refit = epnp_tally(n) + refine_tally(n, cfg.m) + score_tally(n);
    hypothesis.scaled(iterations as u64) + refit
}

/// Operation count of one solve with `n` correspondences. RANSAC is
/// reported at its iteration cap.
pub fn count_ops(method: Method, n: usize, cfg: &OpsConfig) -> Result<OpCount> {
    if n < 4 {
        return Err(Error::InsufficientPoints { required: 4, actual: n });
    }
    let tally = match method {
        Method::Net => net_tally(n),
        Method::PnpNet => net_tally(n) + refine_tally(n, cfg.m),
        Method::Epnp => epnp_tally(n),
        Method::EpnpLm => epnp_tally(n) + refine_tally(n, cfg.m),
        Method::Ransac => {
            if n < cfg.ransac.subset_size {
                return Err(Error::InsufficientPoints {
                    required: cfg.ransac.subset_size,
                    actual: n,
                });
            }
            ransac_tally(n, cfg.ransac.max_iterations, cfg)
        }
        Method::Oracle => Tally::default(),
    };
    Ok(tally.weighted(cfg.transcendental_cost))
}

/// RANSAC at the adaptive iteration count for `cfg.inlier_ratio`.
pub fn ransac_expected_ops(n: usize, cfg: &OpsConfig) -> Result<OpCount> {
    count_ops(Method::Ransac, n, cfg)?;
    let iters = cfg.ransac.required_iterations(cfg.inlier_ratio);
    Ok(ransac_tally(n, iters, cfg).weighted(cfg.transcendental_cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpsCase {
    Fixed,
    WorstCase,
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsRow {
    pub n: usize,
    pub method: Method,
    pub case: OpsCase,
    pub ops: OpCount,
}

/// Operation counts over a range of correspondence counts. Methods that
/// cannot run at some `n` are skipped there.
pub fn bench_ops(methods: &[Method], ns: impl IntoIterator<Item = usize>, cfg: &OpsConfig) -> Vec<OpsRow> {
    let mut rows = Vec::new();
    for n in ns {
        for &method in methods {
            let Ok(ops) = count_ops(method, n, cfg) else {
                continue;
            };
            if method == Method::Ransac {
                rows.push(OpsRow { n, method, case: OpsCase::WorstCase, ops });
                if let Ok(ops) = ransac_expected_ops(n, cfg) {
                    rows.push(OpsRow { n, method, case: OpsCase::Expected, ops });
                }
            } else {
                rows.push(OpsRow { n, method, case: OpsCase::Fixed, ops });
            }
        }
    }
    rows
}

fn counted_params(pose: &Pose) -> [Counted; 6] {
    pose.params().map(Counted)
}

/// Instrumented count of the refiner on `corrs` from `init`.
pub fn instrumented_refine(init: &Pose, f: f64, corrs: &[Correspondence], lm: &LMConfig) -> Tally {
    instrument(|| {
        refine_params(&counted_params(init), Counted(f), corrs, lm);
    })
    .1
}

/// Instrumented count of the network forward pass and axis-angle conversion.
pub fn instrumented_net(params: &NetParams, corrs: &[Correspondence]) -> Tally {
    let raw: Vec<[Counted; 5]> = corrs
        .iter()
        .map(|c| [c.a.x, c.a.y, c.a.z, c.b.x, c.b.y].map(Counted))
        .collect();
    instrument(|| {
        coarse_to_params_generic(&forward_generic(params, &raw));
    })
    .1
}
