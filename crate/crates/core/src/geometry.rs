//! Rotation and projection primitives shared by every solver.
//!
//! Conventions used throughout the crate:
//! - rotations are axis-angle vectors `omega = theta * s` with `theta` in `[0, pi]`;
//! - a [`Pose`] maps world points into the camera frame, `p = R a + t`;
//! - image coordinates are centered on the principal point and the camera
//!   matrix is `diag(f, f, 1)`;
//! - residuals are `project(a) - b`;
//! - Jacobian columns are ordered `(t_x, t_y, t_z, w_x, w_y, w_z)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Below this angle the Rodrigues map and its derivative use a second-order
/// Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-12;

/// Axis-angle rotation in canonical form (`|omega| <= pi`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    omega: Vector3<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self { omega: Vector3::zeros() }
    }

    /// Wraps `omega` so that its norm lies in `[0, pi]`.
    pub fn new(omega: Vector3<f64>) -> Self {
        let theta = omega.norm();
        if theta <= PI || !theta.is_finite() {
            return Self { omega };
        }
        let wrapped = theta.rem_euclid(2.0 * PI);
        let axis = omega / theta;
        let omega = if wrapped > PI {
            axis * (wrapped - 2.0 * PI)
        } else {
            axis * wrapped
        };
        Self { omega }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, theta: f64) -> Self {
        let norm = axis.norm();
        if norm == 0.0 {
            return Self::identity();
        }
        Self::new(axis * (theta / norm))
    }

    /// Recovers the axis-angle vector of a rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self::new(q.scaled_axis())
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.omega
    }

    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub t: Vector3<f64>,
    pub rot: Rotation,
}

impl Pose {
    pub fn new(t: Vector3<f64>, rot: Rotation) -> Self {
        Self { t, rot }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Six optimizer parameters `(t, omega)`.
    pub fn params(&self) -> [f64; 6] {
        let w = self.rot.omega();
        [self.t.x, self.t.y, self.t.z, w.x, w.y, w.z]
    }

    pub fn from_params(p: &[f64; 6]) -> Self {
        Self {
            t: Vector3::new(p[0], p[1], p[2]),
            rot: Rotation::new(Vector3::new(p[3], p[4], p[5])),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// Camera-frame coordinates of a world point.
    pub fn transform(&self, a: &Vector3<f64>) -> Vector3<f64> {
        self.rot.matrix() * a + self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64) -> Result<Self> {
        if f > 0.0 && f.is_finite() {
            Ok(Self { f })
        } else {
            Err(Error::NonPositiveFocal(f))
        }
    }
}

/// One world point and its observed image point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub a: Vector3<f64>,
    pub b: Vector2<f64>,
}

impl Correspondence {
    pub fn new(a: Vector3<f64>, b: Vector2<f64>) -> Self {
        Self { a, b }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

pub type Mat3<S> = [[S; 3]; 3];

#[inline]
fn skew<S: Scalar>(w: &[S; 3]) -> Mat3<S> {
    let z = S::zero();
    [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]]
}

#[inline]
fn matmul3<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub(crate) fn matvec3<S: Scalar>(m: &Mat3<S>, v: &[S; 3]) -> [S; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `R(omega) = I + sin(theta) M + (1 - cos(theta)) M^2` with `M = [s]x`.
pub(crate) fn rodrigues<S: Scalar>(w: &[S; 3]) -> Mat3<S> {
    rodrigues_impl(w, false).0
}

/// Rotation matrix together with `dR/dw_k` for `k = 0, 1, 2`.
pub(crate) fn rodrigues_with_derivatives<S: Scalar>(w: &[S; 3]) -> (Mat3<S>, [Mat3<S>; 3]) {
    rodrigues_impl(w, true)
}

fn rodrigues_impl<S: Scalar>(w: &[S; 3], derivatives: bool) -> (Mat3<S>, [Mat3<S>; 3]) {
    let zero3 = [[S::zero(); 3]; 3];
    let k = skew(w);
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let one = S::one();
    let half = S::from_f64(0.5);

    if theta2.to_f64().sqrt() < SMALL_ANGLE {
        // R ~ I + K + K^2 / 2
        let k2 = matmul3(&k, &k);
        let mut r = zero3;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { one } else { S::zero() };
                r[i][j] = id + k[i][j] + half * k2[i][j];
            }
        }
        let mut dr = [zero3; 3];
        if derivatives {
            for (c, drc) in dr.iter_mut().enumerate() {
                let mut e = [S::zero(); 3];
                e[c] = one;
                let ek = skew(&e);
                let a = matmul3(&ek, &k);
                let b = matmul3(&k, &ek);
                for i in 0..3 {
                    for j in 0..3 {
                        drc[i][j] = ek[i][j] + half * (a[i][j] + b[i][j]);
                    }
                }
            }
        }
        return (r, dr);
    }

    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (one - theta.cos()) / theta2;
    let mut r = zero3;
    for i in 0..3 {
        for j in 0..3 {
            // K^2 = w w^T - theta^2 I
            let k2 = if i == j { w[i] * w[j] - theta2 } else { w[i] * w[j] };
            let id = if i == j { one } else { S::zero() };
            r[i][j] = id + a * k[i][j] + b * k2;
        }
    }

    let mut dr = [zero3; 3];
    if derivatives {
        // dR/dw_c = (w_c [w]x + [w x (I - R) e_c]x) R / theta^2
        let inv_t2 = one / theta2;
        for (c, drc) in dr.iter_mut().enumerate() {
            let mut v = [-r[0][c], -r[1][c], -r[2][c]];
            v[c] += one;
            let u = [
                w[1] * v[2] - w[2] * v[1],
                w[2] * v[0] - w[0] * v[2],
                w[0] * v[1] - w[1] * v[0],
            ];
            let su = skew(&u);
            let mut m = zero3;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (w[c] * k[i][j] + su[i][j]) * inv_t2;
                }
            }
            *drc = matmul3(&m, &r);
        }
    }
    (r, dr)
}

/// Residual and 2x6 Jacobian rows of one correspondence, given the
/// rotation matrix, its derivatives and the translation.
#[inline]
pub(crate) fn point_linearization<S: Scalar>(
    r: &Mat3<S>,
    dr: &[Mat3<S>; 3],
    t: &[S; 3],
    f: S,
    c: &Correspondence,
    index: usize,
) -> Result<([S; 2], [[S; 6]; 2])> {
    let a = [S::from_f64(c.a.x), S::from_f64(c.a.y), S::from_f64(c.a.z)];
    let ra = matvec3(r, &a);
    let p = [ra[0] + t[0], ra[1] + t[1], ra[2] + t[2]];
    if p[2].to_f64().abs() < MIN_DEPTH {
        return Err(Error::DegenerateDepth {
            index,
            depth: p[2].to_f64(),
        });
    }
    let inv_z = S::one() / p[2];
    let fz = f * inv_z;
    let u = fz * p[0];
    let v = fz * p[1];
    let res = [u - S::from_f64(c.b.x), v - S::from_f64(c.b.y)];

    let uz = u * inv_z;
    let vz = v * inv_z;
    let z = S::zero();
    let mut jac = [[fz, z, -uz, z, z, z], [z, fz, -vz, z, z, z]];
    for k in 0..3 {
        let dp = matvec3(&dr[k], &a);
        jac[0][3 + k] = fz * dp[0] - uz * dp[2];
        jac[1][3 + k] = fz * dp[1] - vz * dp[2];
    }
    Ok((res, jac))
}

fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn to_matrix(m: &Mat3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

pub fn rotation_matrix(rot: &Rotation) -> Matrix3<f64> {
    to_matrix(&rodrigues(&to_array(&rot.omega())))
}

/// `arccos((tr(R1 R2^T) - 1) / 2)`, in `[0, pi]`.
pub fn rotation_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    matrix_rotation_distance(&r1.matrix(), &r2.matrix())
}

pub fn matrix_rotation_distance(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let tr = (r1 * r2.transpose()).trace();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Rotation distance and its gradient with respect to the axis-angle vector
/// of `r1`. The gradient is zero where the distance is not differentiable
/// (coincident or antipodal rotations).
pub fn rotation_distance_with_gradient(r1: &Rotation, r2: &Rotation) -> (f64, Vector3<f64>) {
    let (m1, dm1) = rodrigues_with_derivatives(&to_array(&r1.omega()));
    let m1 = to_matrix(&m1);
    let m2 = r2.matrix();
    let q = m1 * m2.transpose();
    let dist = ((q.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    let skew_part = Vector3::new(q[(2, 1)] - q[(1, 2)], q[(0, 2)] - q[(2, 0)], q[(1, 0)] - q[(0, 1)]);
    let sin_d = skew_part.norm() / 2.0;
    if sin_d < 1e-12 {
        return (dist, Vector3::zeros());
    }
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let dk = to_matrix(&dm1[k]);
        let dtr = (dk * m2.transpose()).trace();
        g[k] = -dtr / (2.0 * sin_d);
    }
    (dist, g)
}

/// `Pi(K (R a + t))`.
pub fn project(pose: &Pose, intrinsics: &CameraIntrinsics, a: &Vector3<f64>) -> Result<Vector2<f64>> {
    let p = pose.transform(a);
    if p.z.abs() < MIN_DEPTH {
        return Err(Error::DegenerateDepth { index: 0, depth: p.z });
    }
    Ok(Vector2::new(intrinsics.f * p.x / p.z, intrinsics.f * p.y / p.z))
}

/// Stacked reprojection residuals `project(a_i) - b_i`, two entries per point.
pub fn residuals(pose: &Pose, intrinsics: &CameraIntrinsics, corrs: &[Correspondence]) -> Result<DVector<f64>> {
    let r = rotation_matrix(&pose.rot);
    let mut out = DVector::zeros(2 * corrs.len());
    for (i, c) in corrs.iter().enumerate() {
        let p = r * c.a + pose.t;
        if p.z.abs() < MIN_DEPTH {
            return Err(Error::DegenerateDepth { index: i, depth: p.z });
        }
        out[2 * i] = intrinsics.f * p.x / p.z - c.b.x;
        out[2 * i + 1] = intrinsics.f * p.y / p.z - c.b.y;
    }
    Ok(out)
}

/// Analytic `2n x 6` Jacobian of [`residuals`].
pub fn jacobian(pose: &Pose, intrinsics: &CameraIntrinsics, corrs: &[Correspondence]) -> Result<DMatrix<f64>> {
    let (r, dr) = rodrigues_with_derivatives(&to_array(&pose.rot.omega()));
    let t = to_array(&pose.t);
    let mut out = DMatrix::zeros(2 * corrs.len(), 6);
    for (i, c) in corrs.iter().enumerate() {
        let (_, jac) = point_linearization(&r, &dr, &t, intrinsics.f, c, i)?;
        for row in 0..2 {
            for col in 0..6 {
                out[(2 * i + row, col)] = jac[row][col];
            }
        }
    }
    Ok(out)
}

/// Translation error `|t_hat - t|`.
pub fn translation_error(estimate: &Pose, truth: &Pose) -> f64 {
    (estimate.t - truth.t).norm()
}

/// Rotation error between two poses.
pub fn rotation_error(estimate: &Pose, truth: &Pose) -> f64 {
    rotation_distance(&estimate.rot, &truth.rot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        Rotation::new(random_unit(rng) * rng.random_range(0.0..PI))
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(rotation_matrix(&Rotation::identity()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = rotation_matrix(&Rotation::new(Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((m - expected).abs().max() < 1e-15);
    }

    #[test]
    fn rotation_matrices_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let m = random_rotation(&mut rng).matrix();
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            assert!(close(m.determinant(), 1.0, 1e-9));
        }
    }

    #[test]
    fn canonical_form_wraps_large_angles() {
        let r = Rotation::new(Vector3::new(0.0, 0.0, 1.5 * PI));
        assert!(close(r.omega().z, -0.5 * PI, 1e-12));
        let m1 = r.matrix();
        let m2 = rotation_matrix(&Rotation { omega: Vector3::new(0.0, 0.0, 1.5 * PI) });
        assert!((m1 - m2).abs().max() < 1e-12);
        let r = Rotation::new(Vector3::new(4.0 * PI + 0.25, 0.0, 0.0));
        assert!(close(r.omega().x, 0.25, 1e-12));
    }

    #[test]
    fn distance_to_identity_is_the_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let theta = rng.random_range(0.0..PI);
            let r = Rotation::from_axis_angle(random_unit(&mut rng), theta);
            assert!(close(rotation_distance(&Rotation::identity(), &r), theta, 1e-9));
        }
    }

    #[test]
    fn distance_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let d = rotation_distance(&a, &b);
            assert!((0.0..=PI).contains(&d));
            assert_eq!(d, rotation_distance(&b, &a));
            assert!(rotation_distance(&a, &a) < 1e-7);
        }
    }

    #[test]
    fn composition_reextracts_consistently() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let m = random_rotation(&mut rng).matrix() * random_rotation(&mut rng).matrix();
            let back = Rotation::from_matrix(&m);
            assert!(matrix_rotation_distance(&back.matrix(), &m) < 1e-7);
            assert!((back.matrix() - m).abs().max() < 1e-12);
        }
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = Rotation::new(random_unit(&mut rng) * rng.random_range(0.0..2.5));
            let b = Rotation::new(random_unit(&mut rng) * rng.random_range(0.0..2.5));
            let (_, g) = rotation_distance_with_gradient(&a, &b);
            for k in 0..3 {
                let h = 1e-6;
                let mut wp = a.omega();
                wp[k] += h;
                let mut wm = a.omega();
                wm[k] -= h;
                let fd = (rotation_distance(&Rotation::new(wp), &b) - rotation_distance(&Rotation::new(wm), &b))
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5, "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let pose = Pose::identity();
        let b = project(&pose, &CameraIntrinsics::new(1.0).unwrap(), &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(b, Vector2::new(0.0, 0.0));
        let b = project(&pose, &CameraIntrinsics::new(2.0).unwrap(), &Vector3::new(1.0, 1.0, 2.0)).unwrap();
        assert_eq!(b, Vector2::new(1.0, 1.0));
    }

    #[test]
    fn projection_on_camera_plane_fails() {
        let err = project(&Pose::identity(), &CameraIntrinsics { f: 1.0 }, &Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(err, Err(Error::DegenerateDepth { .. })));
    }

    #[test]
    fn non_positive_focal_is_rejected() {
        assert!(matches!(CameraIntrinsics::new(0.0), Err(Error::NonPositiveFocal(_))));
        assert!(matches!(CameraIntrinsics::new(-3.0), Err(Error::NonPositiveFocal(_))));
    }

    #[test]
    fn residual_sign_convention() {
        let pose = Pose::new(Vector3::new(0.1, -0.2, 10.0), Rotation::new(Vector3::new(0.1, 0.2, 0.3)));
        let k = CameraIntrinsics { f: 500.0 };
        let a = Vector3::new(1.0, 2.0, 3.0);
        let exact = project(&pose, &k, &a).unwrap();
        let c = Correspondence::new(a, exact + Vector2::new(1.0, -2.0));
        let r = residuals(&pose, &k, &[c]).unwrap();
        assert!(close(r[0], -1.0, 1e-9) && close(r[1], 2.0, 1e-9));
    }

    #[test]
    fn residuals_report_offending_index() {
        let corrs = vec![
            Correspondence::new(Vector3::new(0.0, 0.0, 4.0), Vector2::zeros()),
            Correspondence::new(Vector3::new(1.0, 0.0, 0.0), Vector2::zeros()),
        ];
        let err = residuals(&Pose::identity(), &CameraIntrinsics { f: 1.0 }, &corrs).unwrap_err();
        assert!(matches!(err, Error::DegenerateDepth { index: 1, .. }));
    }

    #[test]
    fn optical_axis_translation_derivative() {
        let z = 7.0;
        let c = Correspondence::new(Vector3::new(0.0, 0.0, z), Vector2::zeros());
        let j = jacobian(&Pose::identity(), &CameraIntrinsics { f: 1.0 }, &[c]).unwrap();
        assert_eq!(j.shape(), (2, 6));
        assert!(close(j[(0, 0)], 1.0 / z, 1e-15));
        assert!(close(j[(1, 1)], 1.0 / z, 1e-15));
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let w = Vector3::new(3e-9, -2e-9, 1e-9);
        let m_small = rotation_matrix(&Rotation::new(w));
        let w_big = w * 1e3;
        let m_big = rotation_matrix(&Rotation::new(w_big));
        // R(w) - I is linear in w to first order on both branches.
        let lin_small = (m_small - Matrix3::identity()) * 1e3;
        let lin_big = m_big - Matrix3::identity();
        assert!((lin_small - lin_big).abs().max() < 1e-11);
    }
}
