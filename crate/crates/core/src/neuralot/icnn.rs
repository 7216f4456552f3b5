//! Input-convex potentials and the Makkuva-style semidual W2^2 trainer.
//!
//! Architecture (fixed, 3 hidden layers):
//!   u1 = W0 x + b0,            z1 = act(u1)
//!   u2 = W1x x + Wz1 z1 + b1,  z2 = act(u2)
//!   u3 = W2x x + Wz2 z2 + b2,  z3 = act(u3)
//!   f(x) = wz3 . z3 + wlin . x + 1/2 sum_j c_j^2 x_j^2 + a0
//!
//! The network is convex in x whenever Wz1, Wz2, wz3 >= 0 (act is convex and
//! nondecreasing); the diagonal quadratic + linear skip makes every affine
//! gradient map exactly representable, which is what the moment-matched
//! initialization exploits. All gradients (input and parameter, including the
//! second-order path through the transport map) are hand-written reverse-mode
//! passes over this fixed graph.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use std::ops::Range;

use crate::batch::{SampleBatch, SpaceTag};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng::Stream;

// Smoothed leaky-ReLU: 0.2 t + 0.8 softplus(20 t)/20.
fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        (1.0 + u.exp()).ln()
    }
}

fn act(t: f64) -> f64 {
    0.2 * t + 0.04 * softplus(20.0 * t)
}

fn act_d(t: f64) -> f64 {
    0.2 + 0.8 * sigmoid(20.0 * t)
}

fn act_dd(t: f64) -> f64 {
    let s = sigmoid(20.0 * t);
    16.0 * s * (1.0 - s)
}

#[derive(Debug, Clone)]
struct Layout {
    w0: Range<usize>,
    b0: Range<usize>,
    w1x: Range<usize>,
    wz1: Range<usize>,
    b1: Range<usize>,
    w2x: Range<usize>,
    wz2: Range<usize>,
    b2: Range<usize>,
    wz3: Range<usize>,
    wlin: Range<usize>,
    cq: Range<usize>,
    a0: Range<usize>,
    total: usize,
}

fn layout(d: usize, h: usize) -> Layout {
    let mut off = 0usize;
    let mut take = |len: usize| {
        let r = off..off + len;
        off += len;
        r
    };
    let w0 = take(h * d);
    let b0 = take(h);
    let w1x = take(h * d);
    let wz1 = take(h * h);
    let b1 = take(h);
    let w2x = take(h * d);
    let wz2 = take(h * h);
    let b2 = take(h);
    let wz3 = take(h);
    let wlin = take(d);
    let cq = take(d);
    let a0 = take(1);
    Layout { w0, b0, w1x, wz1, b1, w2x, wz2, b2, wz3, wlin, cq, a0, total: off }
}

/// Flat parameter vector for one ICNN potential.
#[derive(Debug, Clone)]
pub struct IcnnParams {
    pub dim: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl IcnnParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let lay = layout(dim, hidden);
        IcnnParams { dim, hidden, theta: vec![0.0; lay.total] }
    }

    fn lay(&self) -> Layout {
        layout(self.dim, self.hidden)
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// The identity-quadratic fixture f(x) = 1/2 ||x||^2.
    pub fn identity_quadratic(dim: usize, hidden: usize) -> Self {
        let mut p = Self::zeros(dim, hidden);
        let lay = p.lay();
        for v in &mut p.theta[lay.cq] {
            *v = 1.0;
        }
        p
    }

    /// Moment-matched affine potential: gradient map x -> q x + a with
    /// q_j = sd_to_j / sd_from_j, a_j = m_to_j - q_j m_from_j, plus small
    /// random hidden weights that do not yet reach the output (wz3 = 0).
    pub fn affine_init(
        dim: usize,
        hidden: usize,
        from: (&[f64], &[f64]),
        to: (&[f64], &[f64]),
        seed: u64,
    ) -> Self {
        let mut p = Self::zeros(dim, hidden);
        let lay = p.lay();
        let mut s = Stream::new(seed);
        let wscale = 0.1 / (dim as f64).sqrt();
        for r in [lay.w0.clone(), lay.w1x.clone(), lay.w2x.clone()] {
            for v in &mut p.theta[r] {
                *v = wscale * s.normal();
            }
        }
        let zscale = 0.1 / (hidden as f64).sqrt();
        for r in [lay.wz1.clone(), lay.wz2.clone()] {
            for v in &mut p.theta[r] {
                *v = zscale * s.normal().abs();
            }
        }
        for j in 0..dim {
            let sd_from = from.1[j].max(1e-6);
            let sd_to = to.1[j].max(1e-6);
            let q = sd_to / sd_from;
            p.theta[lay.cq.start + j] = q.sqrt();
            p.theta[lay.wlin.start + j] = to.0[j] - q * from.0[j];
        }
        p
    }

    fn constrained_ranges(&self) -> [Range<usize>; 3] {
        let lay = self.lay();
        [lay.wz1, lay.wz2, lay.wz3]
    }

    /// Copy with the constrained weights clamped to >= 0 (certified convex).
    pub fn clipped(&self) -> Self {
        let mut p = self.clone();
        for r in self.constrained_ranges() {
            for v in &mut p.theta[r] {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        p
    }

    /// sum over constrained entries of max(0, -w)^2.
    pub fn negative_mass(&self) -> f64 {
        let mut acc = 0.0;
        for r in self.constrained_ranges() {
            for &v in &self.theta[r] {
                if v < 0.0 {
                    acc += v * v;
                }
            }
        }
        acc
    }

    fn add_penalty_grad(&self, lambda: f64, grad: &mut [f64]) {
        for r in self.constrained_ranges() {
            for i in r {
                if self.theta[i] < 0.0 {
                    grad[i] += 2.0 * lambda * self.theta[i];
                }
            }
        }
    }

    /// Little-endian binary serialization with a 16-byte header
    /// (magic "ICNN", version, dim, hidden).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.theta.len());
        out.extend_from_slice(b"ICNN");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for &v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != b"ICNN" {
            return Err(Error::Config("bad ICNN parameter header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(Error::Config(format!("unsupported ICNN version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hidden = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let lay = layout(dim, hidden);
        let body = &bytes[16..];
        if body.len() != 8 * lay.total {
            return Err(Error::Config("ICNN parameter payload length mismatch".into()));
        }
        let theta = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(IcnnParams { dim, hidden, theta })
    }
}

// Weight views over the flat vector.
struct Views<'a> {
    w0: ArrayView2<'a, f64>,
    w1x: ArrayView2<'a, f64>,
    wz1: ArrayView2<'a, f64>,
    w2x: ArrayView2<'a, f64>,
    wz2: ArrayView2<'a, f64>,
    b0: &'a [f64],
    b1: &'a [f64],
    b2: &'a [f64],
    wz3: &'a [f64],
    wlin: &'a [f64],
    cq: &'a [f64],
    a0: f64,
}

fn views(p: &IcnnParams) -> Views<'_> {
    let lay = p.lay();
    let (d, h) = (p.dim, p.hidden);
    Views {
        w0: ArrayView2::from_shape((h, d), &p.theta[lay.w0]).unwrap(),
        w1x: ArrayView2::from_shape((h, d), &p.theta[lay.w1x]).unwrap(),
        wz1: ArrayView2::from_shape((h, h), &p.theta[lay.wz1]).unwrap(),
        w2x: ArrayView2::from_shape((h, d), &p.theta[lay.w2x]).unwrap(),
        wz2: ArrayView2::from_shape((h, h), &p.theta[lay.wz2]).unwrap(),
        b0: &p.theta[lay.b0],
        b1: &p.theta[lay.b1],
        b2: &p.theta[lay.b2],
        wz3: &p.theta[lay.wz3],
        wlin: &p.theta[lay.wlin],
        cq: &p.theta[lay.cq],
        a0: p.theta[lay.a0][0],
    }
}

struct Cache {
    u1: Array2<f64>,
    z1: Array2<f64>,
    u2: Array2<f64>,
    z2: Array2<f64>,
    u3: Array2<f64>,
    z3: Array2<f64>,
}

fn add_bias(m: &mut Array2<f64>, b: &[f64]) {
    for mut row in m.rows_mut() {
        for (v, &bj) in row.iter_mut().zip(b) {
            *v += bj;
        }
    }
}

fn forward_cache(p: &IcnnParams, x: &ArrayView2<f64>) -> Cache {
    let v = views(p);
    let mut u1 = x.dot(&v.w0.t());
    add_bias(&mut u1, v.b0);
    let z1 = u1.mapv(act);
    let mut u2 = x.dot(&v.w1x.t()) + z1.dot(&v.wz1.t());
    add_bias(&mut u2, v.b1);
    let z2 = u2.mapv(act);
    let mut u3 = x.dot(&v.w2x.t()) + z2.dot(&v.wz2.t());
    add_bias(&mut u3, v.b2);
    let z3 = u3.mapv(act);
    Cache { u1, z1, u2, z2, u3, z3 }
}

fn potential_values(p: &IcnnParams, x: &ArrayView2<f64>, cache: &Cache) -> Array1<f64> {
    let v = views(p);
    let n = x.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut acc = v.a0;
        for (j, &z) in cache.z3.row(i).iter().enumerate() {
            acc += v.wz3[j] * z;
        }
        for (j, &xj) in x.row(i).iter().enumerate() {
            acc += v.wlin[j] * xj + 0.5 * v.cq[j] * v.cq[j] * xj * xj;
        }
        out[i] = acc;
    }
    out
}

// Input gradient of the potential for every row of x: n x d.
fn input_grad(p: &IcnnParams, x: &ArrayView2<f64>, cache: &Cache) -> Array2<f64> {
    let v = views(p);
    let n = x.nrows();
    // du3 = wz3 (.) act'(u3)
    let mut du3 = cache.u3.mapv(act_d);
    for mut row in du3.rows_mut() {
        for (val, &w) in row.iter_mut().zip(v.wz3) {
            *val *= w;
        }
    }
    let mut du2 = du3.dot(&v.wz2);
    du2.zip_mut_with(&cache.u2, |g, &u| *g *= act_d(u));
    let mut du1 = du2.dot(&v.wz1);
    du1.zip_mut_with(&cache.u1, |g, &u| *g *= act_d(u));
    let mut grad = du1.dot(&v.w0) + du2.dot(&v.w1x) + du3.dot(&v.w2x);
    for i in 0..n {
        for j in 0..p.dim {
            grad[[i, j]] += v.wlin[j] + v.cq[j] * v.cq[j] * x[[i, j]];
        }
    }
    grad
}

// grad views over a flat gradient vector with the same layout
struct GradViews<'a> {
    w0: ArrayViewMut2<'a, f64>,
    w1x: ArrayViewMut2<'a, f64>,
    wz1: ArrayViewMut2<'a, f64>,
    w2x: ArrayViewMut2<'a, f64>,
    wz2: ArrayViewMut2<'a, f64>,
}

fn grad_views<'a>(
    p: &IcnnParams,
    grad: &'a mut [f64],
) -> (GradViews<'a>, Range<usize>, Range<usize>, Range<usize>, Range<usize>, Range<usize>, Range<usize>, Range<usize>)
{
    let lay = p.lay();
    let (d, h) = (p.dim, p.hidden);
    // split_at_mut choreography: carve the matrix blocks out in layout order
    let (m0, rest) = grad.split_at_mut(lay.b0.start);
    let (_, rest) = rest.split_at_mut(lay.w1x.start - lay.b0.start);
    let (m1, rest2) = rest.split_at_mut(lay.wz1.start - lay.w1x.start);
    let (mz1, rest3) = rest2.split_at_mut(lay.b1.start - lay.wz1.start);
    let (_, rest4) = rest3.split_at_mut(lay.w2x.start - lay.b1.start);
    let (m2, rest5) = rest4.split_at_mut(lay.wz2.start - lay.w2x.start);
    let (mz2, _) = rest5.split_at_mut(lay.b2.start - lay.wz2.start);
    let gv = GradViews {
        w0: ArrayViewMut2::from_shape((h, d), m0).unwrap(),
        w1x: ArrayViewMut2::from_shape((h, d), m1).unwrap(),
        wz1: ArrayViewMut2::from_shape((h, h), mz1).unwrap(),
        w2x: ArrayViewMut2::from_shape((h, d), m2).unwrap(),
        wz2: ArrayViewMut2::from_shape((h, h), mz2).unwrap(),
    };
    (gv, lay.b0, lay.b1, lay.b2, lay.wz3, lay.wlin, lay.cq, lay.a0)
}

fn add_col_sums(dst: &mut [f64], m: &Array2<f64>) {
    for row in m.rows() {
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

// Accumulate d(sum_i alpha_i f(x_i)) / d theta into grad.
fn accumulate_value_grad(
    p: &IcnnParams,
    x: &ArrayView2<f64>,
    cache: &Cache,
    alpha: &Array1<f64>,
    grad: &mut [f64],
) {
    let v = views(p);
    let n = x.nrows();
    // bar_z3[i, j] = alpha_i * wz3_j
    let mut bar_u3 = cache.u3.mapv(act_d);
    for (i, mut row) in bar_u3.rows_mut().into_iter().enumerate() {
        for (val, &w) in row.iter_mut().zip(v.wz3) {
            *val *= alpha[i] * w;
        }
    }
    let mut bar_u2 = bar_u3.dot(&v.wz2);
    bar_u2.zip_mut_with(&cache.u2, |g, &u| *g *= act_d(u));
    let mut bar_u1 = bar_u2.dot(&v.wz1);
    bar_u1.zip_mut_with(&cache.u1, |g, &u| *g *= act_d(u));

    let (mut gv, b0r, b1r, b2r, wz3r, wlinr, cqr, a0r) = grad_views(p, grad);
    general_mat_mul(1.0, &bar_u1.t(), x, 1.0, &mut gv.w0);
    general_mat_mul(1.0, &bar_u2.t(), x, 1.0, &mut gv.w1x);
    general_mat_mul(1.0, &bar_u2.t(), &cache.z1.view(), 1.0, &mut gv.wz1);
    general_mat_mul(1.0, &bar_u3.t(), x, 1.0, &mut gv.w2x);
    general_mat_mul(1.0, &bar_u3.t(), &cache.z2.view(), 1.0, &mut gv.wz2);
    drop(gv);
    add_col_sums(&mut grad[b0r], &bar_u1);
    add_col_sums(&mut grad[b1r], &bar_u2);
    add_col_sums(&mut grad[b2r], &bar_u3);
    for i in 0..n {
        let a = alpha[i];
        for (g, &z) in grad[wz3r.clone()].iter_mut().zip(cache.z3.row(i)) {
            *g += a * z;
        }
        for j in 0..p.dim {
            let xj = x[[i, j]];
            grad[wlinr.start + j] += a * xj;
            grad[cqr.start + j] += a * v.cq[j] * xj * xj;
        }
        grad[a0r.start] += a;
    }
}

// Accumulate d(sum_i beta_i <v_i, grad_x g(y_i)>) / d theta_g into grad.
// Forward tangent pass in direction v, then reverse over the augmented graph;
// this is the second-order path needed by the semidual objective.
fn accumulate_directional_grad(
    p: &IcnnParams,
    y: &ArrayView2<f64>,
    vdir: &ArrayView2<f64>,
    cache: &Cache,
    beta: &Array1<f64>,
    grad: &mut [f64],
) {
    let vw = views(p);
    let n = y.nrows();
    let d1 = cache.u1.mapv(act_d);
    let d2 = cache.u2.mapv(act_d);
    let d3 = cache.u3.mapv(act_d);

    // tangent forward
    let t_u1 = vdir.dot(&vw.w0.t());
    let t_z1 = &d1 * &t_u1;
    let t_u2 = vdir.dot(&vw.w1x.t()) + t_z1.dot(&vw.wz1.t());
    let t_z2 = &d2 * &t_u2;
    let t_u3 = vdir.dot(&vw.w2x.t()) + t_z2.dot(&vw.wz2.t());
    let t_z3 = &d3 * &t_u3;

    // reverse: bar_t_z3[i, j] = beta_i * wz3_j
    let mut bar_t_z3 = Array2::zeros((n, p.hidden));
    for i in 0..n {
        for j in 0..p.hidden {
            bar_t_z3[[i, j]] = beta[i] * vw.wz3[j];
        }
    }
    let bar_t_u3 = &d3 * &bar_t_z3;
    let mut bar_u3 = cache.u3.mapv(act_dd);
    bar_u3 *= &t_u3;
    bar_u3 *= &bar_t_z3;

    let bar_t_z2 = bar_t_u3.dot(&vw.wz2);
    let bar_z2 = bar_u3.dot(&vw.wz2);
    let bar_t_u2 = &d2 * &bar_t_z2;
    let mut bar_u2 = cache.u2.mapv(act_dd);
    bar_u2 *= &t_u2;
    bar_u2 *= &bar_t_z2;
    bar_u2 += &(&d2 * &bar_z2);

    let bar_t_z1 = bar_t_u2.dot(&vw.wz1);
    let bar_z1 = bar_u2.dot(&vw.wz1);
    let bar_t_u1 = &d1 * &bar_t_z1;
    let mut bar_u1 = cache.u1.mapv(act_dd);
    bar_u1 *= &t_u1;
    bar_u1 *= &bar_t_z1;
    bar_u1 += &(&d1 * &bar_z1);

    let (mut gv, b0r, b1r, b2r, wz3r, wlinr, cqr, _a0r) = grad_views(p, grad);
    // tangent-equation terms
    general_mat_mul(1.0, &bar_t_u1.t(), vdir, 1.0, &mut gv.w0);
    general_mat_mul(1.0, &bar_t_u2.t(), vdir, 1.0, &mut gv.w1x);
    general_mat_mul(1.0, &bar_t_u2.t(), &t_z1.view(), 1.0, &mut gv.wz1);
    general_mat_mul(1.0, &bar_t_u3.t(), vdir, 1.0, &mut gv.w2x);
    general_mat_mul(1.0, &bar_t_u3.t(), &t_z2.view(), 1.0, &mut gv.wz2);
    // primal-equation terms
    general_mat_mul(1.0, &bar_u1.t(), y, 1.0, &mut gv.w0);
    general_mat_mul(1.0, &bar_u2.t(), y, 1.0, &mut gv.w1x);
    general_mat_mul(1.0, &bar_u2.t(), &cache.z1.view(), 1.0, &mut gv.wz1);
    general_mat_mul(1.0, &bar_u3.t(), y, 1.0, &mut gv.w2x);
    general_mat_mul(1.0, &bar_u3.t(), &cache.z2.view(), 1.0, &mut gv.wz2);
    drop(gv);
    add_col_sums(&mut grad[b0r], &bar_u1);
    add_col_sums(&mut grad[b1r], &bar_u2);
    add_col_sums(&mut grad[b2r], &bar_u3);
    for i in 0..n {
        let b = beta[i];
        for (g, &tz) in grad[wz3r.clone()].iter_mut().zip(t_z3.row(i)) {
            *g += b * tz;
        }
        for j in 0..p.dim {
            grad[wlinr.start + j] += b * vdir[[i, j]];
            grad[cqr.start + j] += b * 2.0 * vw.cq[j] * y[[i, j]] * vdir[[i, j]];
        }
    }
}

fn as_view(batch: &SampleBatch) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((batch.len(), batch.dim()), batch.as_slice()).unwrap()
}

/// Potential value at a single point.
pub fn icnn_forward(p: &IcnnParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), p.dim);
    let xv = ArrayView2::from_shape((1, p.dim), x).unwrap();
    let cache = forward_cache(p, &xv);
    potential_values(p, &xv, &cache)[0]
}

/// Input gradient at a single point (the transport map when p is the
/// transport potential).
pub fn icnn_gradient(p: &IcnnParams, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), p.dim);
    let xv = ArrayView2::from_shape((1, p.dim), x).unwrap();
    let cache = forward_cache(p, &xv);
    input_grad(p, &xv, &cache).row(0).to_vec()
}

fn sq_norm_mean(x: &ArrayView2<f64>) -> f64 {
    x.iter().map(|&v| v * v).sum::<f64>() / x.nrows() as f64
}

// J = mean_P f(x) + mean_Q [ <y, T(y)> - f(T(y)) ], T = grad g.
fn semidual_objective(f: &IcnnParams, g: &IcnnParams, xp: &ArrayView2<f64>, yq: &ArrayView2<f64>) -> f64 {
    let cache_f_p = forward_cache(f, xp);
    let f_on_p = potential_values(f, xp, &cache_f_p);
    let cache_g = forward_cache(g, yq);
    let t = input_grad(g, yq, &cache_g);
    let tv = t.view();
    let cache_f_t = forward_cache(f, &tv);
    let f_on_t = potential_values(f, &tv, &cache_f_t);
    let n_q = yq.nrows() as f64;
    let mut inner = 0.0;
    for i in 0..yq.nrows() {
        let dot: f64 = yq.row(i).iter().zip(t.row(i)).map(|(&a, &b)| a * b).sum();
        inner += dot - f_on_t[i];
    }
    f_on_p.mean().unwrap() + inner / n_q
}

/// The two training losses on a fixed minibatch pair: the critic f minimizes
/// J + penalty(f), the transport g minimizes -J + penalty(g).
pub fn semidual_loss(
    f: &IcnnParams,
    g: &IcnnParams,
    batch_p: &SampleBatch,
    batch_q: &SampleBatch,
    penalty: f64,
) -> Result<(f64, f64)> {
    if batch_p.dim() != batch_q.dim() {
        return Err(Error::DimensionMismatch { expected: batch_p.dim(), got: batch_q.dim() });
    }
    let j = semidual_objective(f, g, &as_view(batch_p), &as_view(batch_q));
    let loss_f = j + penalty * f.negative_mass();
    let loss_g = -j + penalty * g.negative_mass();
    if !loss_f.is_finite() || !loss_g.is_finite() {
        return Err(Error::TrainingDiverged { iter: 0 });
    }
    Ok((loss_f, loss_g))
}

/// W2^2 estimate on a fixed pair of batches:
/// mean ||x||^2 + mean ||y||^2 - 2 J(f, g).
/// Parameter gradients of the two semidual losses on fixed batches,
/// exposed so the reverse pass can be verified against finite differences
/// of [`semidual_loss`].
pub fn semidual_param_grads(
    f: &IcnnParams,
    g: &IcnnParams,
    batch_p: &SampleBatch,
    batch_q: &SampleBatch,
    penalty: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if batch_p.dim() != batch_q.dim() {
        return Err(Error::DimensionMismatch { expected: batch_p.dim(), got: batch_q.dim() });
    }
    let xp = as_view(batch_p);
    let yq = as_view(batch_q);
    Ok((grad_f(f, g, &xp, &yq, penalty), grad_g(f, g, &yq, penalty)))
}

pub fn w2_estimate_on(f: &IcnnParams, g: &IcnnParams, batch_p: &SampleBatch, batch_q: &SampleBatch) -> f64 {
    let xp = as_view(batch_p);
    let yq = as_view(batch_q);
    sq_norm_mean(&xp) + sq_norm_mean(&yq) - 2.0 * semidual_objective(f, g, &xp, &yq)
}

// d(loss_f)/d theta_f on fixed batches; T = grad g held fixed.
fn grad_f(f: &IcnnParams, g: &IcnnParams, xp: &ArrayView2<f64>, yq: &ArrayView2<f64>, penalty: f64) -> Vec<f64> {
    let mut grad = vec![0.0; f.n_params()];
    let cache_f_p = forward_cache(f, xp);
    let alpha_p = Array1::from_elem(xp.nrows(), 1.0 / xp.nrows() as f64);
    accumulate_value_grad(f, xp, &cache_f_p, &alpha_p, &mut grad);
    let cache_g = forward_cache(g, yq);
    let t = input_grad(g, yq, &cache_g);
    let tv = t.view();
    let cache_f_t = forward_cache(f, &tv);
    let alpha_q = Array1::from_elem(yq.nrows(), -1.0 / yq.nrows() as f64);
    accumulate_value_grad(f, &tv, &cache_f_t, &alpha_q, &mut grad);
    f.add_penalty_grad(penalty, &mut grad);
    grad
}

// d(loss_g)/d theta_g = -d J/d theta_g + penalty grad, via the directional
// trick: dJ/dtheta_g = mean_Q d<v, grad g(y)>/dtheta with v = y - grad f(T(y)).
fn grad_g(f: &IcnnParams, g: &IcnnParams, yq: &ArrayView2<f64>, penalty: f64) -> Vec<f64> {
    let mut grad = vec![0.0; g.n_params()];
    let cache_g = forward_cache(g, yq);
    let t = input_grad(g, yq, &cache_g);
    let tv = t.view();
    let cache_f_t = forward_cache(f, &tv);
    let grad_f_at_t = input_grad(f, &tv, &cache_f_t);
    let v = yq.to_owned() - &grad_f_at_t;
    let beta = Array1::from_elem(yq.nrows(), -1.0 / yq.nrows() as f64);
    accumulate_directional_grad(g, yq, &v.view(), &cache_g, &beta, &mut grad);
    g.add_penalty_grad(penalty, &mut grad);
    grad
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub convexity_penalty: f64,
    pub inner_updates_per_outer: usize,
    pub total_outer_iters: usize,
    pub eval_minibatches: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            convexity_penalty: 0.1,
            inner_updates_per_outer: 10,
            total_outer_iters: 2000,
            eval_minibatches: 8,
            hidden_width: 256,
            seed: 0,
        }
    }
}

/// Adam moment accumulators for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Anything that can produce unlimited fresh minibatches.
pub trait BatchSource {
    fn draw(&mut self, n: usize) -> SampleBatch;
}

impl<F: FnMut(usize) -> SampleBatch> BatchSource for F {
    fn draw(&mut self, n: usize) -> SampleBatch {
        self(n)
    }
}

/// One row of the training history.
#[derive(Debug, Clone)]
pub struct LossRecord {
    pub iter: usize,
    pub loss_f: f64,
    pub loss_g: f64,
    pub estimate: f64,
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iter,loss_f,loss_g,estimate\n");
    for r in history {
        out.push_str(&format!("{},{:.9},{:.9},{:.9}\n", r.iter, r.loss_f, r.loss_g, r.estimate));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub estimate: f64,
    pub history: Vec<LossRecord>,
    pub f: IcnnParams,
    pub g: IcnnParams,
}

fn batch_moments(b: &SampleBatch) -> (Vec<f64>, Vec<f64>) {
    let d = b.dim();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        mean[j] = b.col_mean(j);
        sd[j] = b.col_var(j).sqrt();
    }
    (mean, sd)
}

/// Alternating semidual optimization from given initial potentials.
pub fn train_w2_estimator_from(
    mut f: IcnnParams,
    mut g: IcnnParams,
    p_source: &mut dyn BatchSource,
    q_source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut adam_f = AdamState::new(f.n_params());
    let mut adam_g = AdamState::new(g.n_params());
    let pen = cfg.convexity_penalty;
    let mut history = Vec::with_capacity(cfg.total_outer_iters);

    for outer in 0..cfg.total_outer_iters {
        for _ in 0..cfg.inner_updates_per_outer {
            let yb = q_source.draw(cfg.batch_size);
            let grad = grad_g(&f, &g, &as_view(&yb), pen);
            adam_g.step(&mut g.theta, &grad, cfg);
        }
        let xb = p_source.draw(cfg.batch_size);
        let yb = q_source.draw(cfg.batch_size);
        let grad = grad_f(&f, &g, &as_view(&xb), &as_view(&yb), pen);
        adam_f.step(&mut f.theta, &grad, cfg);

        let (loss_f, loss_g) = semidual_loss(&f, &g, &xb, &yb, pen)
            .map_err(|_| Error::TrainingDiverged { iter: outer })?;
        let estimate = w2_estimate_on(&f, &g, &xb, &yb);
        if !estimate.is_finite() {
            return Err(Error::TrainingDiverged { iter: outer });
        }
        history.push(LossRecord { iter: outer, loss_f, loss_g, estimate });
    }

    // Final estimate: certified-convex (clipped) potentials averaged over
    // fresh evaluation minibatches.
    let fc = f.clipped();
    let gc = g.clipped();
    let mut acc = 0.0;
    for _ in 0..cfg.eval_minibatches {
        let xb = p_source.draw(cfg.batch_size);
        let yb = q_source.draw(cfg.batch_size);
        acc += w2_estimate_on(&fc, &gc, &xb, &yb);
    }
    let estimate = acc / cfg.eval_minibatches as f64;
    if !estimate.is_finite() {
        return Err(Error::TrainingDiverged { iter: cfg.total_outer_iters });
    }
    Ok(TrainOutcome { estimate, history, f, g })
}

/// Full pipeline: moment-matched affine initialization from pilot batches,
/// then alternating optimization.
pub fn train_w2_estimator(
    p_source: &mut dyn BatchSource,
    q_source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let pilot_n = cfg.batch_size.max(256);
    let xp = p_source.draw(pilot_n);
    let yq = q_source.draw(pilot_n);
    let (mp, sp) = batch_moments(&xp);
    let (mq, sq) = batch_moments(&yq);
    let dim = xp.dim();
    // f transports P-mass toward Q, g transports Q-mass toward P.
    let f = IcnnParams::affine_init(dim, cfg.hidden_width, (&mp, &sp), (&mq, &sq), cfg.seed ^ 0x66);
    let g = IcnnParams::affine_init(dim, cfg.hidden_width, (&mq, &sq), (&mp, &sp), cfg.seed ^ 0x67);
    train_w2_estimator_from(f, g, p_source, q_source, cfg)
}

/// Fit the potential's gradient map to given input/target pairs by minibatch
/// Adam on the mean squared error. Used to warm-start the semidual
/// optimization with an empirical monotone map when one is available (1-D
/// sorted pairing); the final W2^2 estimate still comes from the semidual
/// objective. Returns the last minibatch MSE.
pub fn fit_gradient_map(
    params: &mut IcnnParams,
    inputs: &SampleBatch,
    targets: &SampleBatch,
    steps: usize,
    batch_size: usize,
    lr: f64,
    penalty: f64,
    seed: u64,
) -> Result<f64> {
    if inputs.len() != targets.len() {
        return Err(Error::SizeMismatch { n_p: inputs.len(), n_q: targets.len() });
    }
    if inputs.dim() != params.dim || targets.dim() != params.dim {
        return Err(Error::DimensionMismatch { expected: params.dim, got: inputs.dim() });
    }
    let mut adam = AdamState::new(params.n_params());
    let cfg = TrainConfig { lr, ..TrainConfig::default() };
    let mut stream = Stream::new(seed);
    let n = inputs.len();
    let b = batch_size.min(n);
    let d = params.dim;
    let mut last_mse = f64::INFINITY;
    for it in 0..steps {
        let mut xs = vec![0.0; b * d];
        let mut ts = vec![0.0; b * d];
        for r in 0..b {
            let i = stream.index(n);
            xs[r * d..(r + 1) * d].copy_from_slice(inputs.row(i));
            ts[r * d..(r + 1) * d].copy_from_slice(targets.row(i));
        }
        let xv = ArrayView2::from_shape((b, d), &xs).unwrap();
        let cache = forward_cache(params, &xv);
        let gmap = input_grad(params, &xv, &cache);
        let mut v = gmap;
        for (r, row) in v.rows_mut().into_iter().enumerate() {
            for (j, val) in row.into_iter().enumerate() {
                *val -= ts[r * d + j];
            }
        }
        last_mse = v.iter().map(|&e| e * e).sum::<f64>() / b as f64;
        if !last_mse.is_finite() {
            return Err(Error::TrainingDiverged { iter: it });
        }
        // d MSE / d theta = (2/b) sum_i <grad_map(x_i) - t_i, d grad_map / d theta>
        let beta = Array1::from_elem(b, 2.0 / b as f64);
        let mut grad = vec![0.0; params.n_params()];
        accumulate_directional_grad(params, &xv, &v.view(), &cache, &beta, &mut grad);
        params.add_penalty_grad(penalty, &mut grad);
        adam.step(&mut params.theta, &grad, &cfg);
    }
    Ok(last_mse)
}

/// Gaussian minibatch source (shared by tests and the engine).
pub struct GaussianSource {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub stream: Stream,
}

impl BatchSource for GaussianSource {
    fn draw(&mut self, n: usize) -> SampleBatch {
        let d = self.mean.len();
        let mut data = vec![0.0; n * d];
        self.stream.fill_normal(&mut data);
        for (i, v) in data.iter_mut().enumerate() {
            let j = i % d;
            *v = self.mean[j] + self.sd[j] * *v;
        }
        SampleBatch::new(data, n, d, 0, SpaceTag::Parameter)
    }
}
