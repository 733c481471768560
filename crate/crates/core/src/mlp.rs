//! The coarse-initialization network.
//!
//! A shared trunk of sizes `20n, 5n, 3n` feeds two heads of five `2n` layers
//! each; the rotation head ends in a linear layer of size 4 (unnormalized
//! axis and angle) and the translation head in one of size 3. Every hidden
//! layer is a ReLU.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation};
use crate::preprocess::ProblemInstance;
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const HEAD_DEPTH: usize = 5;
/// Below this axis norm the coarse rotation is the identity.
pub const MIN_AXIS_NORM: f64 = 1e-8;

/// Fully connected layer, `outputs x inputs` weights stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply<S: Scalar>(&self, x: &[S], relu: bool) -> Vec<S> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = S::from_f64(self.bias[o]);
                for (w, xi) in row.iter().zip(x) {
                    acc += S::from_f64(*w) * *xi;
                }
                if relu {
                    acc.max(S::zero())
                } else {
                    acc
                }
            })
            .collect()
    }
}

/// Fixed affine maps between physical units and the network's working range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// World coordinates are divided by this before entering the trunk.
    pub world: f64,
    /// Image coordinates (at `F_CONST`) are divided by this.
    pub image: f64,
    /// Translation outputs are multiplied by this.
    pub translation: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            world: 50.0,
            image: 400.0,
            translation: 10.0,
        }
    }
}

/// The 7 raw network outputs in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarsePose {
    pub t: Vector3<f64>,
    pub s_raw: Vector3<f64>,
    pub theta: f64,
}

impl CoarsePose {
    /// `(t_x, t_y, t_z, s_x, s_y, s_z, theta)`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.t.x, self.t.y, self.t.z, self.s_raw.x, self.s_raw.y, self.s_raw.z, self.theta]
    }

    pub fn from_array(v: &[f64; 7]) -> Self {
        Self {
            t: Vector3::new(v[0], v[1], v[2]),
            s_raw: Vector3::new(v[3], v[4], v[5]),
            theta: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub n: usize,
    pub scaling: Scaling,
    pub trunk: Vec<Dense>,
    pub head_rot: Vec<Dense>,
    pub head_trans: Vec<Dense>,
}

/// `(inputs, outputs)` of every layer: trunk, rotation head, translation head.
pub fn layer_shapes(n: usize) -> Vec<(usize, usize)> {
    let mut shapes = vec![(5 * n, 20 * n), (20 * n, 5 * n), (5 * n, 3 * n)];
    for out in [4, 3] {
        shapes.push((3 * n, 2 * n));
        for _ in 1..HEAD_DEPTH {
            shapes.push((2 * n, 2 * n));
        }
        shapes.push((2 * n, out));
    }
    shapes
}

impl NetParams {
    pub fn zeros(n: usize) -> Self {
        let mut layers = layer_shapes(n).into_iter().map(|(i, o)| Dense::zeros(i, o));
        let trunk = layers.by_ref().take(3).collect();
        let head_rot = layers.by_ref().take(HEAD_DEPTH + 1).collect();
        let head_trans = layers.collect();
        Self {
            n,
            scaling: Scaling::default(),
            trunk,
            head_rot,
            head_trans,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(&self.head_rot).chain(&self.head_trans)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(&mut self.head_rot).chain(&mut self.head_trans)
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut rest = flat;
        for l in self.layers_mut() {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
            && [self.scaling.world, self.scaling.image, self.scaling.translation]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Checks that the layer shapes chain as the architecture requires.
    pub fn validate(&self) -> Result<()> {
        let expected = layer_shapes(self.n);
        let actual: Vec<_> = self.layers().map(|l| (l.inputs, l.outputs)).collect();
        if self.trunk.len() != 3 || self.head_rot.len() != HEAD_DEPTH + 1 || actual != expected {
            return Err(Error::Format(format!("layer shapes {actual:?} do not match n = {}", self.n)));
        }
        if self.layers().any(|l| l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs) {
            return Err(Error::Format("layer buffer sizes do not match their shapes".into()));
        }
        if !self.is_finite() {
            return Err(Error::Format("non-finite network parameter".into()));
        }
        Ok(())
    }
}

/// Variance-preserving uniform bound: `sqrt(6 / fan_in)` ahead of a ReLU,
/// `sqrt(3 / fan_in)` for the linear output layers.
pub fn init_bound(fan_in: usize, relu: bool) -> f64 {
    (if relu { 6.0 } else { 3.0 } / fan_in as f64).sqrt()
}

/// Uniform fan-in-scaled weights (see [`init_bound`]), zero biases.
pub fn init_params(seed: u64, n: usize) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetParams::zeros(n);
    let heads = [&mut p.head_rot, &mut p.head_trans]
        .into_iter()
        .flat_map(|h| h.iter_mut().enumerate().map(|(k, l)| (l, k < HEAD_DEPTH)));
    for (l, relu) in p.trunk.iter_mut().map(|l| (l, true)).chain(heads) {
        let bound = init_bound(l.inputs, relu);
        for w in &mut l.weights {
            *w = rng.random_range(-bound..=bound);
        }
    }
    p
}

/// Flattened network input `(a_1, b_1, ..., a_n, b_n)` after scaling.
pub fn encode_input(params: &NetParams, inst: &ProblemInstance) -> Result<Vec<f64>> {
    if inst.n() != params.n {
        return Err(Error::ShapeMismatch {
            expected: params.n,
            actual: inst.n(),
        });
    }
    let wa = 1.0 / params.scaling.world;
    let wb = 1.0 / params.scaling.image;
    Ok(inst
        .corrs
        .iter()
        .flat_map(|c| [c.a.x * wa, c.a.y * wa, c.a.z * wa, c.b.x * wb, c.b.y * wb])
        .collect())
}

fn run_path<S: Scalar>(layers: &[Dense], x: &[S]) -> Vec<S> {
    let last = layers.len() - 1;
    layers
        .iter()
        .enumerate()
        .fold(x.to_vec(), |h, (k, l)| l.apply(&h, k < last))
}

/// Forward pass from raw (unscaled) correspondences, generic over the scalar.
pub(crate) fn forward_generic<S: Scalar>(params: &NetParams, raw: &[[S; 5]]) -> [S; 7] {
    let wa = S::from_f64(1.0 / params.scaling.world);
    let wb = S::from_f64(1.0 / params.scaling.image);
    let x: Vec<S> = raw
        .iter()
        .flat_map(|c| [c[0] * wa, c[1] * wa, c[2] * wa, c[3] * wb, c[4] * wb])
        .collect();
    let h = params.trunk.iter().fold(x, |h, l| l.apply(&h, true));
    let rot = run_path(&params.head_rot, &h);
    let tr = run_path(&params.head_trans, &h);
    let ts = S::from_f64(params.scaling.translation);
    [tr[0] * ts, tr[1] * ts, tr[2] * ts, rot[0], rot[1], rot[2], rot[3]]
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each trunk layer, followed by the trunk output.
    trunk: Vec<Vec<f64>>,
    head_rot: Vec<Vec<f64>>,
    head_trans: Vec<Vec<f64>>,
}

fn record_path(layers: &[Dense], x: Vec<f64>, relu_last: bool) -> Vec<Vec<f64>> {
    let last = layers.len() - 1;
    let mut acts = vec![x];
    for (k, l) in layers.iter().enumerate() {
        let next = l.apply(acts.last().unwrap(), k < last || relu_last);
        acts.push(next);
    }
    acts
}

pub fn net_forward_cached(params: &NetParams, inst: &ProblemInstance) -> Result<(CoarsePose, ForwardCache)> {
    let x = encode_input(params, inst)?;
    let trunk = record_path(&params.trunk, x, true);
    let h = trunk.last().unwrap().clone();
    let head_rot = record_path(&params.head_rot, h.clone(), false);
    let head_trans = record_path(&params.head_trans, h, false);
    let r = head_rot.last().unwrap();
    let t = head_trans.last().unwrap();
    let ts = params.scaling.translation;
    let coarse = CoarsePose {
        t: Vector3::new(t[0] * ts, t[1] * ts, t[2] * ts),
        s_raw: Vector3::new(r[0], r[1], r[2]),
        theta: r[3],
    };
    Ok((
        coarse,
        ForwardCache {
            trunk,
            head_rot,
            head_trans,
        },
    ))
}

pub fn net_forward(params: &NetParams, inst: &ProblemInstance) -> Result<CoarsePose> {
    net_forward_cached(params, inst).map(|(c, _)| c)
}

/// Back-propagates `upstream` through `layers`, accumulating into `grads`,
/// and returns the gradient with respect to the path input.
fn backprop_path(layers: &[Dense], acts: &[Vec<f64>], upstream: Vec<f64>, grads: &mut [Dense]) -> Vec<f64> {
    let mut dy = upstream;
    for k in (0..layers.len()).rev() {
        let (l, g) = (&layers[k], &mut grads[k]);
        let x = &acts[k];
        for o in 0..l.outputs {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += d * xi;
            }
        }
        let mut dx = vec![0.0; l.inputs];
        for o in 0..l.outputs {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
            for (dxi, w) in dx.iter_mut().zip(row) {
                *dxi += d * w;
            }
        }
        // ReLU on the layer below: its output is this layer's input.
        if k > 0 {
            for (d, a) in dx.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        dy = dx;
    }
    dy
}

/// Adds the gradient of `upstream . outputs` to `grads`.
pub fn backward_cached(params: &NetParams, cache: &ForwardCache, upstream: &[f64; 7], grads: &mut NetParams) {
    let ts = params.scaling.translation;
    let d_rot = vec![upstream[3], upstream[4], upstream[5], upstream[6]];
    let d_trans = vec![upstream[0] * ts, upstream[1] * ts, upstream[2] * ts];
    let mut dh = backprop_path(&params.head_rot, &cache.head_rot, d_rot, &mut grads.head_rot);
    let dh_t = backprop_path(&params.head_trans, &cache.head_trans, d_trans, &mut grads.head_trans);
    let h = cache.trunk.last().unwrap();
    for ((d, e), a) in dh.iter_mut().zip(&dh_t).zip(h) {
        *d = if *a > 0.0 { *d + e } else { 0.0 };
    }
    backprop_path(&params.trunk, &cache.trunk, dh, &mut grads.trunk);
}

/// Gradient of `upstream . net_forward(params, inst)` with respect to every parameter.
pub fn net_backward(params: &NetParams, inst: &ProblemInstance, upstream: &[f64; 7]) -> Result<NetParams> {
    let (_, cache) = net_forward_cached(params, inst)?;
    let mut grads = NetParams::zeros(params.n);
    grads.scaling = params.scaling;
    backward_cached(params, &cache, upstream, &mut grads);
    Ok(grads)
}

/// `omega = clamp(theta, 0, pi) * s_raw / |s_raw|`, identity for a vanishing axis.
pub fn coarse_to_pose(c: &CoarsePose) -> Pose {
    let norm = c.s_raw.norm();
    let theta = c.theta.clamp(0.0, std::f64::consts::PI);
    let omega = if norm < MIN_AXIS_NORM {
        Vector3::zeros()
    } else {
        c.s_raw * (theta / norm)
    };
    Pose::new(c.t, Rotation::new(omega))
}

pub(crate) fn coarse_to_params_generic<S: Scalar>(c: &[S; 7]) -> [S; 6] {
    let norm = (c[3] * c[3] + c[4] * c[4] + c[5] * c[5]).sqrt();
    if norm.to_f64() < MIN_AXIS_NORM {
        return [c[0], c[1], c[2], S::zero(), S::zero(), S::zero()];
    }
    let theta = c[6].max(S::zero());
    let pi = S::from_f64(std::f64::consts::PI);
    let theta = if theta > pi { pi } else { theta };
    let k = theta / norm;
    [c[0], c[1], c[2], c[3] * k, c[4] * k, c[5] * k]
}

/// Jacobian of `(t, omega)` with respect to the 7 coarse outputs.
///
/// Outside `[0, pi]` the angle derivative is taken as if unclamped, so a
/// loss can still push an out-of-range angle back.
pub fn coarse_to_pose_jacobian(c: &CoarsePose) -> [[f64; 7]; 6] {
    let mut j = [[0.0; 7]; 6];
    for (k, row) in j.iter_mut().take(3).enumerate() {
        row[k] = 1.0;
    }
    let norm = c.s_raw.norm();
    if norm < MIN_AXIS_NORM {
        return j;
    }
    let u = c.s_raw / norm;
    let theta = c.theta.clamp(0.0, std::f64::consts::PI);
    for a in 0..3 {
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            j[3 + a][3 + b] = theta * (delta - u[a] * u[b]) / norm;
        }
        j[3 + a][6] = u[a];
    }
    j
}
