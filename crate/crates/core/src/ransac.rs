//! Hypothesize-and-verify over EPnP-LM fits on random subsets.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epnp::epnp_lm;
use crate::geometry::{Pose, MIN_DEPTH};
use crate::lm::LMConfig;
use crate::preprocess::ProblemInstance;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub subset_size: usize,
    pub max_iterations: usize,
    /// Pixels.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            subset_size: 7,
            max_iterations: 200,
            inlier_threshold: 3.0,
            confidence: 0.99,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 4 {
            return Err(Error::InvalidConfig("subset_size must be at least 4".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidConfig("inlier_threshold must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Iterations needed to draw one all-inlier subset with probability
    /// `confidence`, assuming a fraction `inlier_ratio` of inliers.
    pub fn required_iterations(&self, inlier_ratio: f64) -> usize {
        let p_good = inlier_ratio.clamp(0.0, 1.0).powi(self.subset_size as i32);
        if p_good >= 1.0 {
            return 1;
        }
        if p_good <= 0.0 {
            return self.max_iterations;
        }
        let n = ((1.0 - self.confidence).ln() / (1.0 - p_good).ln()).ceil();
        (n.max(1.0) as usize).min(self.max_iterations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub iterations: usize,
    /// Inlier count of every hypothesis that produced a pose, in sampling order.
    pub hypothesis_inliers: Vec<usize>,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Inlier mask and total inlier reprojection error of `pose`.
/// Points at or behind the camera are never inliers.
pub fn score(pose: &Pose, inst: &ProblemInstance, threshold: f64) -> (Vec<bool>, f64) {
    let r = pose.rot.matrix();
    let f = inst.intrinsics.f;
    let mut err = 0.0;
    let mask = inst
        .corrs
        .iter()
        .map(|c| {
            let p = r * c.a + pose.t;
            if !(p.z > MIN_DEPTH) {
                return false;
            }
            let e = ((f * p.x / p.z - c.b.x).powi(2) + (f * p.y / p.z - c.b.y).powi(2)).sqrt();
            let inlier = e <= threshold;
            if inlier {
                err += e;
            }
            inlier
        })
        .collect();
    (mask, err)
}

/// Full run with bookkeeping.
pub fn ransac_run(inst: &ProblemInstance, cfg: &RansacConfig, lm_cfg: &LMConfig) -> Result<RansacOutcome> {
    cfg.validate()?;
    lm_cfg.validate()?;
    let n = inst.n();
    if n < cfg.subset_size {
        return Err(Error::InsufficientPoints {
            required: cfg.subset_size,
            actual: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Pose, Vec<bool>)> = None;
    let mut hypothesis_inliers = Vec::new();
    let mut budget = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        let mut idx = sample(&mut rng, n, cfg.subset_size).into_vec();
        idx.sort_unstable();
        let Ok(pose) = epnp_lm(&inst.subset(&idx), lm_cfg) else {
            continue;
        };
        let (mask, err) = score(&pose, inst, cfg.inlier_threshold);
        let count = mask.iter().filter(|&&b| b).count();
        hypothesis_inliers.push(count);
        let better = match &best {
            None => true,
            Some((c, e, _, _)) => count > *c || (count == *c && err < *e),
        };
        if better {
            budget = budget.min(cfg.required_iterations(count as f64 / n as f64));
            best = Some((count, err, pose, mask));
        }
    }
    let (_, _, mut pose, mut inliers) = best.ok_or(Error::NoValidHypothesis)?;
    let idx: Vec<usize> = (0..n).filter(|&i| inliers[i]).collect();
    if idx.len() >= 4 {
        if let Ok(refit) = epnp_lm(&inst.subset(&idx), lm_cfg) {
            let (mask, _) = score(&refit, inst, cfg.inlier_threshold);
            if refit.is_finite() && mask.iter().filter(|&&b| b).count() >= idx.len() {
                pose = refit;
                inliers = mask;
            }
        }
    }
    Ok(RansacOutcome {
        pose,
        inliers,
        iterations,
        hypothesis_inliers,
    })
}

pub fn ransac_solve(inst: &ProblemInstance, cfg: &RansacConfig, lm_cfg: &LMConfig) -> Result<Pose> {
    ransac_run(inst, cfg, lm_cfg).map(|o| o.pose)
}
