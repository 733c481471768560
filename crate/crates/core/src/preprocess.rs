//! Problem instances and their canonicalization ahead of the network.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Correspondence, Pose};
use crate::{Error, Result};

/// Focal length every instance is rescaled to before it reaches the network.
pub const F_CONST: f64 = 800.0;

/// `n` correspondences observed by a camera of focal length `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub intrinsics: CameraIntrinsics,
    pub corrs: Vec<Correspondence>,
    pub truth: Option<Pose>,
    /// `true` marks an outlier. Only synthetic data carries a mask.
    pub outlier_mask: Option<Vec<bool>>,
}

impl ProblemInstance {
    pub fn new(intrinsics: CameraIntrinsics, corrs: Vec<Correspondence>) -> Self {
        Self {
            intrinsics,
            corrs,
            truth: None,
            outlier_mask: None,
        }
    }

    pub fn n(&self) -> usize {
        self.corrs.len()
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier_mask.as_ref().map_or(0, |m| m.iter().filter(|&&o| o).count())
    }

    /// Checks the structural invariants: finite coordinates, positive focal
    /// length and a mask of matching length.
    pub fn validate(&self) -> Result<()> {
        CameraIntrinsics::new(self.intrinsics.f)?;
        if let Some(mask) = &self.outlier_mask {
            if mask.len() != self.corrs.len() {
                return Err(Error::ShapeMismatch {
                    expected: self.corrs.len(),
                    actual: mask.len(),
                });
            }
        }
        if self.corrs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Format("non-finite coordinate".into()));
        }
        if self.truth.is_some_and(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite ground-truth pose".into()));
        }
        Ok(())
    }

    /// Sub-instance restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> ProblemInstance {
        ProblemInstance {
            intrinsics: self.intrinsics,
            corrs: indices.iter().map(|&i| self.corrs[i]).collect(),
            truth: self.truth,
            outlier_mask: self.outlier_mask.as_ref().map(|m| indices.iter().map(|&i| m[i]).collect()),
        }
    }
}

/// Rescales the image points so the instance behaves as if observed with
/// focal length `f_const`. World points and the pose are unchanged.
pub fn normalize_focal(inst: &ProblemInstance, f_const: f64) -> Result<ProblemInstance> {
    let f = CameraIntrinsics::new(inst.intrinsics.f)?.f;
    let target = CameraIntrinsics::new(f_const)?;
    if f == f_const {
        return Ok(inst.clone());
    }
    let scale = f_const / f;
    let mut out = inst.clone();
    out.intrinsics = target;
    for c in &mut out.corrs {
        c.b *= scale;
    }
    Ok(out)
}

fn lexicographic(a: &Correspondence, b: &Correspondence) -> Ordering {
    let ka = [a.b.x, a.b.y, a.a.x, a.a.y, a.a.z];
    let kb = [b.b.x, b.b.y, b.a.x, b.a.y, b.a.z];
    ka.iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Orders correspondences by `(b_x, b_y)`, breaking ties on `(a_x, a_y, a_z)`.
/// The outlier mask follows its correspondences.
pub fn sort_correspondences(inst: &ProblemInstance) -> ProblemInstance {
    let mut order: Vec<usize> = (0..inst.n()).collect();
    order.sort_by(|&i, &j| lexicographic(&inst.corrs[i], &inst.corrs[j]));
    inst.subset(&order)
}

/// Focal normalization followed by sorting.
pub fn canonicalize(inst: &ProblemInstance, f_const: f64) -> Result<ProblemInstance> {
    Ok(sort_correspondences(&normalize_focal(inst, f_const)?))
}
