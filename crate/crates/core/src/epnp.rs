//! EPnP: closed-form pose through virtual control points.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::geometry::{residuals, Pose, Rotation};
use crate::lm::{refine_pose, LMConfig};
use crate::preprocess::ProblemInstance;
use crate::{Error, Result};

/// Relative eigenvalue below which a principal direction is treated as absent.
const RANK_TOL: f64 = 1e-10;
pub(crate) const BETA_POLISH_ITERS: usize = 10;

/// World points expressed as affine combinations of 4 control points
/// (3 for planar clouds).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointFrame {
    pub c: Vec<Vector3<f64>>,
    /// `n x k`, each row sums to one.
    pub barycentric: DMatrix<f64>,
}

impl ControlPointFrame {
    pub fn new(world: &[Vector3<f64>]) -> Result<Self> {
        let n = world.len();
        if n < 3 {
            return Err(Error::InsufficientPoints { required: 3, actual: n });
        }
        let centroid = world.iter().sum::<Vector3<f64>>() / n as f64;
        let cov = world
            .iter()
            .map(|p| (p - centroid) * (p - centroid).transpose())
            .sum::<Matrix3<f64>>();
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = eig.eigenvalues[order[0]];
        if top <= 0.0 || eig.eigenvalues[order[1]] <= RANK_TOL * top {
            return Err(Error::DegenerateConfiguration("world points are collinear"));
        }
        let axes = if eig.eigenvalues[order[2]] <= RANK_TOL * top { 2 } else { 3 };

        let mut c = vec![centroid];
        let mut dirs = Vec::with_capacity(axes);
        for &i in &order[..axes] {
            let scale = (eig.eigenvalues[i] / n as f64).sqrt();
            let v: Vector3<f64> = eig.eigenvectors.column(i).into();
            c.push(centroid + scale * v);
            dirs.push(v / scale);
        }
        let mut barycentric = DMatrix::zeros(n, axes + 1);
        for (row, p) in world.iter().enumerate() {
            let d = p - centroid;
            let mut rest = 0.0;
            for (k, dir) in dirs.iter().enumerate() {
                let a = dir.dot(&d);
                barycentric[(row, k + 1)] = a;
                rest += a;
            }
            barycentric[(row, 0)] = 1.0 - rest;
        }
        Ok(Self { c, barycentric })
    }

    pub fn k(&self) -> usize {
        self.c.len()
    }

    pub fn reconstruct(&self, row: usize) -> Vector3<f64> {
        (0..self.k()).map(|j| self.barycentric[(row, j)] * self.c[j]).sum()
    }
}

/// Rigid `(R, t)` minimizing `sum |R src_i + t - dst_i|^2`, always a proper rotation.
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - cd) * (s - cs).transpose())
        .sum::<Matrix3<f64>>();
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let sign = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    (r, cd - r * cs)
}

struct Kernel {
    /// Null-space candidates, smallest eigenvalue first; each has `3k` entries.
    v: Vec<DVector<f64>>,
    pairs: Vec<(usize, usize)>,
    rho: Vec<f64>,
}

impl Kernel {
    fn diff(&self, m: usize, pair: (usize, usize)) -> Vector3<f64> {
        let (a, b) = pair;
        let v = &self.v[m];
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    }

    fn combine(&self, betas: &[f64]) -> DVector<f64> {
        betas.iter().zip(&self.v).map(|(b, v)| *b * v).fold(DVector::zeros(self.v[0].len()), |acc, x| acc + x)
    }

    /// Gauss-Newton on `|sum_m beta_m dv_m,ab|^2 = rho_ab`.
    fn polish(&self, betas: &mut [f64]) {
        let k = betas.len();
        for _ in 0..BETA_POLISH_ITERS {
            let mut jac = DMatrix::zeros(self.pairs.len(), k);
            let mut res = DVector::zeros(self.pairs.len());
            for (row, &pair) in self.pairs.iter().enumerate() {
                let d: Vec<Vector3<f64>> = (0..k).map(|m| self.diff(m, pair)).collect();
                let s: Vector3<f64> = d.iter().zip(betas.iter()).map(|(d, b)| *b * d).sum();
                res[row] = s.norm_squared() - self.rho[row];
                for m in 0..k {
                    jac[(row, m)] = 2.0 * s.dot(&d[m]);
                }
            }
            let Some(delta) = jac.clone().svd(true, true).solve(&res, 1e-14).ok() else {
                return;
            };
            for (b, d) in betas.iter_mut().zip(delta.iter()) {
                *b -= d;
            }
        }
    }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().svd(true, true).solve(b, 1e-14).ok()
}

/// Candidate betas for `N = 1, 2, 3` null-space dimensions.
fn beta_candidates(kernel: &Kernel, k: usize) -> Vec<Vec<f64>> {
    let dot = |i: usize, j: usize, pair| kernel.diff(i, pair).dot(&kernel.diff(j, pair));
    let rho = DVector::from_column_slice(&kernel.rho);
    let np = kernel.pairs.len();
    let mut out = Vec::new();

    let l: Vec<f64> = kernel.pairs.iter().map(|&p| dot(0, 0, p)).collect();
    let num: f64 = l.iter().zip(&kernel.rho).map(|(l, r)| l * r).sum();
    let den: f64 = l.iter().map(|l| l * l).sum();
    if den > 0.0 {
        let mut betas = vec![0.0; k];
        betas[0] = (num / den).abs().sqrt();
        out.push(betas);
    }

    let mut l2 = DMatrix::zeros(np, 3);
    for (row, &p) in kernel.pairs.iter().enumerate() {
        l2[(row, 0)] = dot(0, 0, p);
        l2[(row, 1)] = 2.0 * dot(0, 1, p);
        l2[(row, 2)] = dot(1, 1, p);
    }
    if let Some(x) = least_squares(&l2, &rho) {
        let (b11, b12, b22) = (x[0], x[1], x[2]);
        let mut b1 = b11.abs().sqrt();
        let b2 = if b11.signum() == b22.signum() { b22.abs().sqrt() } else { 0.0 };
        if b12 < 0.0 {
            b1 = -b1;
        }
        let mut betas = vec![0.0; k];
        betas[0] = b1;
        betas[1] = b2;
        out.push(betas);
    }

    if k >= 3 {
        let mut l3 = DMatrix::zeros(np, 5);
        for (row, &p) in kernel.pairs.iter().enumerate() {
            l3[(row, 0)] = dot(0, 0, p);
            l3[(row, 1)] = 2.0 * dot(0, 1, p);
            l3[(row, 2)] = dot(1, 1, p);
            l3[(row, 3)] = 2.0 * dot(0, 2, p);
            l3[(row, 4)] = 2.0 * dot(1, 2, p);
        }
        if let Some(x) = least_squares(&l3, &rho) {
            let (b11, b12, b22, b13) = (x[0], x[1], x[2], x[3]);
            let mut b1 = b11.abs().sqrt();
            let b2 = if b11.signum() == b22.signum() { b22.abs().sqrt() } else { 0.0 };
            if b12 < 0.0 {
                b1 = -b1;
            }
            let b3 = if b1 != 0.0 { b13 / b1 } else { 0.0 };
            let mut betas = vec![0.0; k];
            betas[0] = b1;
            betas[1] = b2;
            betas[2] = b3;
            out.push(betas);
        }
    }
    out
}

fn sum_sq_reprojection(pose: &Pose, inst: &ProblemInstance) -> f64 {
    residuals(pose, &inst.intrinsics, &inst.corrs).map_or(f64::INFINITY, |r| r.norm_squared())
}

/// Closed-form EPnP estimate.
pub fn epnp_solve(inst: &ProblemInstance) -> Result<Pose> {
    let n = inst.n();
    if n < 4 {
        return Err(Error::InsufficientPoints { required: 4, actual: n });
    }
    let f = inst.intrinsics.f;
    let world: Vec<Vector3<f64>> = inst.corrs.iter().map(|c| c.a).collect();
    let frame = ControlPointFrame::new(&world)?;
    let k = frame.k();

    let mut m = DMatrix::zeros(2 * n, 3 * k);
    for (i, c) in inst.corrs.iter().enumerate() {
        let (u, v) = (c.b.x / f, c.b.y / f);
        for j in 0..k {
            let a = frame.barycentric[(i, j)];
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -a * u;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -a * v;
        }
    }
    let eig = SymmetricEigen::new(m.transpose() * &m);
    let mut order: Vec<usize> = (0..3 * k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let dims = k.min(3);
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            pairs.push((a, b));
        }
    }
    let kernel = Kernel {
        v: order[..dims].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect(),
        rho: pairs.iter().map(|&(a, b)| (frame.c[a] - frame.c[b]).norm_squared()).collect(),
        pairs,
    };

    let mut best: Option<(f64, Pose)> = None;
    for mut betas in beta_candidates(&kernel, dims) {
        kernel.polish(&mut betas);
        let x = kernel.combine(&betas);
        let mut cam: Vec<Vector3<f64>> = (0..k).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
        let mean_depth: f64 = (0..n)
            .map(|i| (0..k).map(|j| frame.barycentric[(i, j)] * cam[j].z).sum::<f64>())
            .sum();
        if mean_depth < 0.0 {
            for p in &mut cam {
                *p = -*p;
            }
        }
        let (r, t) = procrustes(&frame.c, &cam);
        let pose = Pose::new(t, Rotation::from_matrix(&r));
        if !pose.is_finite() {
            continue;
        }
        let err = sum_sq_reprojection(&pose, inst);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::DegenerateConfiguration("no finite EPnP candidate"))
}

/// EPnP followed by IRLS-LM refinement.
pub fn epnp_lm(inst: &ProblemInstance, cfg: &LMConfig) -> Result<Pose> {
    cfg.validate()?;
    let pose = epnp_solve(inst)?;
    Ok(refine_pose(&pose, inst, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, rotation_error, translation_error, CameraIntrinsics, Correspondence};
    use crate::synthgen::{sample_instance, OutlierPolicy, ScenarioConfig};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noiseless() -> ScenarioConfig {
        ScenarioConfig {
            sigma3d: 0.0,
            sigma2d: 0.0,
            outliers: OutlierPolicy::Off,
            ..Default::default()
        }
    }

    #[test]
    fn barycentric_rows_reconstruct_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let pts: Vec<Vector3<f64>> = (0..9)
                .map(|_| Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..80.0)))
                .collect();
            let frame = ControlPointFrame::new(&pts).unwrap();
            assert_eq!(frame.k(), 4);
            for (i, p) in pts.iter().enumerate() {
                let s: f64 = frame.barycentric.row(i).sum();
                assert!((s - 1.0).abs() < 1e-10);
                assert!((frame.reconstruct(i) - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn planar_cloud_uses_three_control_points() {
        let pts: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new(i as f64, (i * i % 5) as f64, 2.0 * i as f64)).collect();
        let mut plane = pts.clone();
        for p in &mut plane {
            p.z = 0.5 * p.x - p.y + 3.0;
        }
        let frame = ControlPointFrame::new(&plane).unwrap();
        assert_eq!(frame.k(), 3);
        for (i, p) in plane.iter().enumerate() {
            assert!((frame.reconstruct(i) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let k = CameraIntrinsics { f: 800.0 };
        let corrs = (0..6)
            .map(|i| Correspondence::new(Vector3::new(i as f64, 2.0 * i as f64, 1.0 + i as f64), Vector2::new(i as f64, 0.0)))
            .collect();
        let inst = ProblemInstance::new(k, corrs);
        assert!(matches!(epnp_solve(&inst), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn too_few_points_are_rejected() {
        let k = CameraIntrinsics { f: 800.0 };
        let corrs = (0..3).map(|i| Correspondence::new(Vector3::new(i as f64, 1.0, 2.0), Vector2::zeros())).collect();
        assert!(matches!(
            epnp_solve(&ProblemInstance::new(k, corrs)),
            Err(Error::InsufficientPoints { required: 4, actual: 3 })
        ));
    }

    #[test]
    fn procrustes_is_proper_and_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let rot = Rotation::new(Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            let t = Vector3::new(1.0, -2.0, 3.0);
            let src: Vec<Vector3<f64>> = (0..5)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let dst: Vec<_> = src.iter().map(|p| rot.matrix() * p + t).collect();
            let (r, tt) = procrustes(&src, &dst);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            assert!((r - rot.matrix()).norm() < 1e-9);
            assert!((tt - t).norm() < 1e-9);
            // Mirror image: best proper rotation, never a reflection.
            let mirrored: Vec<_> = dst.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
            let (r, _) = procrustes(&src, &mirrored);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_instances_are_solved_exactly() {
        let cfg = noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut exact = 0;
        let total = 200;
        for _ in 0..total {
            let inst = sample_instance(&cfg, &mut rng).unwrap();
            let pose = epnp_solve(&inst).unwrap();
            let truth = inst.truth.unwrap();
            let rms = (sum_sq_reprojection(&pose, &inst) / inst.n() as f64).sqrt();
            if rotation_error(&pose, &truth) < 1e-3 && translation_error(&pose, &truth) < 1e-3 && rms < 1e-6 {
                exact += 1;
            }
        }
        assert!(exact as f64 >= 0.95 * total as f64, "{exact}/{total}");
    }

    #[test]
    fn planar_noiseless_instance_is_solved() {
        let pose = Pose::new(Vector3::new(0.3, -0.2, 30.0), Rotation::new(Vector3::new(0.3, 0.2, -0.1)));
        let k = CameraIntrinsics { f: 800.0 };
        let corrs = [(0.0, 0.0), (4.0, 1.0), (-3.0, 2.0), (1.0, -5.0), (2.0, 3.0), (-4.0, -4.0)]
            .iter()
            .map(|&(x, y)| {
                let a = Vector3::new(x, y, 0.0);
                Correspondence::new(a, project(&pose, &k, &a).unwrap())
            })
            .collect();
        let est = epnp_solve(&ProblemInstance::new(k, corrs)).unwrap();
        assert!(rotation_error(&est, &pose) < 1e-6);
        assert!(translation_error(&est, &pose) < 1e-6);
    }

    #[test]
    fn lm_polish_does_not_increase_residual() {
        let cfg = noiseless();
        let lm = LMConfig::uniform(10, 0.0, 1.0, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let inst = sample_instance(&cfg, &mut rng).unwrap();
            let a = sum_sq_reprojection(&epnp_solve(&inst).unwrap(), &inst);
            let b = sum_sq_reprojection(&epnp_lm(&inst, &lm).unwrap(), &inst);
            assert!(b <= a + 1e-12, "{b} > {a}");
        }
    }
}
