//! Synthetic PnP instances: pose priors, noisy correspondences and outliers.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geometry::{project, CameraIntrinsics, Correspondence, Pose, Rotation};
use crate::preprocess::{ProblemInstance, F_CONST};
use crate::{Error, Result};

/// Rejected draws tolerated per instance before giving up.
pub const RESAMPLE_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosePrior {
    /// Translation uniform in a cube centered at the origin.
    UniformBox,
    /// Translation components i.i.d. zero-mean Gaussian.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierPolicy {
    Off,
    /// Count uniform on `{0, ..., outlier_count_max}`.
    Uniform,
    /// Exactly this many outliers in every instance.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n: usize,
    pub pose_prior: PosePrior,
    pub t_box_halfwidth: f64,
    pub theta_range: [f64; 2],
    /// Extent of the camera-frame point box: `x` and `y` are centered on the
    /// optical axis, depth spans `[min_depth, point_box[2]]`.
    pub point_box: [f64; 3],
    pub min_depth: f64,
    pub sigma3d: f64,
    pub sigma2d: f64,
    /// Read `sigma3d`/`sigma2d` as variances instead of standard deviations.
    pub noise_is_variance: bool,
    pub outliers: OutlierPolicy,
    /// Defaults to `floor(n / 3)`.
    pub outlier_count_max: Option<usize>,
    pub gaussian_sigma: f64,
    pub focal: f64,
    pub image_halfwidth: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 9,
            pose_prior: PosePrior::UniformBox,
            t_box_halfwidth: 12.5,
            theta_range: [0.0, FRAC_PI_2],
            point_box: [20.0, 20.0, 80.0],
            min_depth: 1.0,
            sigma3d: 0.05,
            sigma2d: 1.0,
            noise_is_variance: false,
            outliers: OutlierPolicy::Uniform,
            outlier_count_max: None,
            gaussian_sigma: 25.0,
            focal: F_CONST,
            image_halfwidth: 400.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn max_outliers(&self) -> usize {
        self.outlier_count_max.unwrap_or(self.n / 3)
    }

    pub fn noise_std(&self) -> (f64, f64) {
        if self.noise_is_variance {
            (self.sigma3d.sqrt(), self.sigma2d.sqrt())
        } else {
            (self.sigma3d, self.sigma2d)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n < 4 {
            return bad("n must be >= 4");
        }
        if !(self.sigma3d >= 0.0 && self.sigma2d >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if self.max_outliers() > self.n {
            return bad("outlier_count_max exceeds n");
        }
        if let OutlierPolicy::Fixed(k) = self.outliers {
            if k > self.n {
                return bad("fixed outlier count exceeds n");
            }
        }
        if !(self.focal > 0.0 && self.image_halfwidth > 0.0) {
            return bad("focal and image_halfwidth must be > 0");
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.point_box[2]) {
            return bad("min_depth must lie in (0, point_box[2])");
        }
        if !(self.theta_range[0] >= 0.0 && self.theta_range[0] <= self.theta_range[1]) {
            return bad("theta_range must be ordered and non-negative");
        }
        if self.point_box.iter().any(|&e| e <= 0.0) || self.t_box_halfwidth < 0.0 || self.gaussian_sigma < 0.0 {
            return bad("box extents must be positive");
        }
        Ok(())
    }
}

pub fn sample_pose(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Pose {
    let t = match cfg.pose_prior {
        PosePrior::UniformBox => {
            let h = cfg.t_box_halfwidth;
            Vector3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h))
        }
        PosePrior::Gaussian => {
            let n = Normal::new(0.0, cfg.gaussian_sigma).expect("validated sigma");
            Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
        }
    };
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let [lo, hi] = cfg.theta_range;
    let theta = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Pose::new(t, Rotation::from_axis_angle(Vector3::from(axis), theta))
}

fn gaussian(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        z * std
    }
}

/// Noisy, outlier-free instance with ground truth and an all-false mask.
pub fn sample_instance(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<ProblemInstance> {
    let pose = sample_pose(cfg, rng);
    let k = CameraIntrinsics::new(cfg.focal)?;
    let r_inv = pose.rot.matrix().transpose();
    let (s3, s2) = cfg.noise_std();
    let [bx, by, bz] = cfg.point_box;
    let hw = cfg.image_halfwidth;
    let inside = |b: &Vector2<f64>| b.x.abs() <= hw && b.y.abs() <= hw;

    let mut rejections = 0;
    let mut corrs = Vec::with_capacity(cfg.n);
    while corrs.len() < cfg.n {
        let p = Vector3::new(
            rng.random_range(-bx / 2.0..=bx / 2.0),
            rng.random_range(-by / 2.0..=by / 2.0),
            rng.random_range(cfg.min_depth..=bz),
        );
        let a_true = r_inv * (p - pose.t);
        let a = a_true + Vector3::new(gaussian(rng, s3), gaussian(rng, s3), gaussian(rng, s3));
        let accepted = match project(&pose, &k, &a_true) {
            Ok(exact) => {
                let b = exact + Vector2::new(gaussian(rng, s2), gaussian(rng, s2));
                (inside(&exact) && inside(&b)).then_some(b)
            }
            Err(_) => None,
        };
        match accepted {
            Some(b) => corrs.push(Correspondence::new(a, b)),
            None => {
                rejections += 1;
                if rejections >= RESAMPLE_LIMIT {
                    return Err(Error::ResampleLimitExceeded(rejections));
                }
            }
        }
    }
    Ok(ProblemInstance {
        intrinsics: k,
        outlier_mask: Some(vec![false; cfg.n]),
        corrs,
        truth: Some(pose),
    })
}

/// Draws the outlier count for one instance.
pub fn draw_outlier_count(cfg: &ScenarioConfig, rng: &mut impl Rng) -> usize {
    match cfg.outliers {
        OutlierPolicy::Off => 0,
        OutlierPolicy::Uniform => rng.random_range(0..=cfg.max_outliers()),
        OutlierPolicy::Fixed(k) => k,
    }
}

/// Corrupts `count` correspondences. `wrong_match` of them receive the image
/// point of another correspondence (a derangement when two or more are
/// chosen); the rest receive a uniform draw over the image.
pub fn corrupt(
    inst: &ProblemInstance,
    rng: &mut impl Rng,
    image_halfwidth: f64,
    count: usize,
    wrong_match: usize,
) -> ProblemInstance {
    let n = inst.n();
    let count = count.min(n);
    let wrong_match = wrong_match.min(count);
    let mut out = inst.clone();
    let mut mask = inst.outlier_mask.clone().unwrap_or_else(|| vec![false; n]);
    if count == 0 {
        return out;
    }
    let slots = index::sample(rng, n, count).into_vec();
    let (matched, sensed) = slots.split_at(wrong_match);

    match matched.len() {
        0 => {}
        1 => {
            let i = matched[0];
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.corrs[i].b = inst.corrs[j].b;
        }
        k => {
            // Random derangement by rejection; expected ~e tries.
            let perm = loop {
                let p = index::sample(rng, k, k).into_vec();
                if p.iter().enumerate().all(|(i, &j)| i != j) {
                    break p;
                }
            };
            for (slot, &src) in matched.iter().zip(&perm) {
                out.corrs[*slot].b = inst.corrs[matched[src]].b;
            }
        }
    }
    let h = image_halfwidth;
    for &i in sensed {
        out.corrs[i].b = Vector2::new(rng.random_range(-h..=h), rng.random_range(-h..=h));
    }
    for &i in &slots {
        mask[i] = true;
    }
    out.outlier_mask = Some(mask);
    out
}

/// Draws an outlier count under `cfg` and splits it evenly between wrong
/// matches and wrong sensing. Odd counts alternate which kind gets the extra
/// outlier; `parity` carries that alternation across calls.
pub fn inject_outliers(
    inst: &ProblemInstance,
    rng: &mut impl Rng,
    cfg: &ScenarioConfig,
    parity: &mut bool,
) -> ProblemInstance {
    let count = draw_outlier_count(cfg, rng);
    let mut wrong_match = count / 2;
    if count % 2 == 1 {
        if *parity {
            wrong_match += 1;
        }
        *parity = !*parity;
    }
    corrupt(inst, rng, cfg.image_halfwidth, count, wrong_match)
}

/// Deterministic instance stream for one scenario.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    parity: bool,
}

impl SyntheticStream {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, rng, parity: false })
    }

    /// Independent stream `stream` of the same seed; stream 0 is [`new`](Self::new).
    pub fn with_stream(cfg: ScenarioConfig, stream: u64) -> Result<Self> {
        let mut s = Self::new(cfg)?;
        s.rng.set_stream(stream);
        Ok(s)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn next_instance(&mut self) -> Result<ProblemInstance> {
        let inst = sample_instance(&self.cfg, &mut self.rng)?;
        Ok(inject_outliers(&inst, &mut self.rng, &self.cfg, &mut self.parity))
    }

    pub fn take_instances(&mut self, count: usize) -> Result<Vec<ProblemInstance>> {
        (0..count).map(|_| self.next_instance()).collect()
    }
}

impl Iterator for SyntheticStream {
    type Item = Result<ProblemInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_instance())
    }
}
