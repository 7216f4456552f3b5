//! Numerical verification of the stability theory: test-function growth
//! profiles, the rare-event contamination experiment, and quadrature checks
//! of the likelihood-perturbation and prior-perturbation utility bounds with
//! their explicit local constants.
//!
//! Bound checks run at 1-D desk scale where both sides are computable:
//! the likelihood check uses a conjugate linear-Gaussian observation model
//! (posteriors exact), the prior check uses the compact-domain additive-noise
//! model `Y = X + eta` on `[0, R]` whose local constants are explicitly
//! integrable.

use crate::batch::{SampleBatch, SpaceTag};
use crate::error::{Error, Result};
use crate::ipm::{self, MetricKind, MetricSpec};
use crate::math::{median, norm_cdf, norm_pdf};
use crate::models::Gaussian1D;
use crate::rng::Stream;

// ---------------------------------------------------------------------------
// Growth profiles
// ---------------------------------------------------------------------------

/// Pointwise growth profile omega_F(x) = sup_{f in F} |f(x)| of a metric's
/// test-function class, anchored at `anchor` for the unbounded classes.
#[derive(Debug, Clone)]
pub struct GrowthProfile {
    pub metric: MetricKind,
    pub anchor: f64,
}

impl GrowthProfile {
    pub fn new(metric: MetricKind, anchor: f64) -> Result<Self> {
        match metric {
            MetricKind::W1_1D | MetricKind::Ed2 | MetricKind::Mmd2 => {
                Ok(GrowthProfile { metric, anchor })
            }
            other => Err(Error::Config(format!(
                "no growth profile for metric {}",
                other.name()
            ))),
        }
    }

    /// omega(x): 1 for bounded-kernel MMD, sqrt distance for the anchored
    /// energy class, distance for anchored 1-Lipschitz functions.
    pub fn eval(&self, x: f64) -> f64 {
        match self.metric {
            MetricKind::Mmd2 => 1.0,
            MetricKind::Ed2 => (x - self.anchor).abs().sqrt(),
            MetricKind::W1_1D => (x - self.anchor).abs(),
            _ => unreachable!("constructor rejects other kinds"),
        }
    }

    /// Expected growth under a Gaussian prior, by quadrature.
    pub fn expected_under(&self, prior: &Gaussian1D) -> f64 {
        match self.metric {
            MetricKind::Mmd2 => 1.0,
            _ => {
                let (lo, hi) = (prior.mean - 10.0 * prior.std, prior.mean + 10.0 * prior.std);
                simpson(lo, hi, 801, |x| self.eval(x) * norm_pdf(x - prior.mean, prior.std))
            }
        }
    }
}

/// Growth profile value at a point; anchor comes from the metric spec
/// (required for the unbounded classes).
pub fn growth_profile(metric: &MetricSpec, x: &[f64]) -> Result<f64> {
    let anchor0 = match (&metric.anchor, metric.kind) {
        (_, MetricKind::Mmd2) => 0.0,
        (Some(a), _) if a.len() == x.len() => {
            // distance to the anchor point in any dimension
            return match metric.kind {
                MetricKind::W1_1D => Ok(dist(x, a)),
                MetricKind::Ed2 => Ok(dist(x, a).sqrt()),
                other => Err(Error::Config(format!(
                    "no growth profile for metric {}",
                    other.name()
                ))),
            };
        }
        (Some(a), _) => {
            return Err(Error::DimensionMismatch { expected: x.len(), got: a.len() })
        }
        (None, _) => {
            return Err(Error::Config("anchor required for unbounded growth profiles".into()))
        }
    };
    let profile = GrowthProfile::new(metric.kind, anchor0)?;
    Ok(profile.eval(x.first().copied().unwrap_or(0.0)))
}

fn dist(x: &[f64], a: &[f64]) -> f64 {
    x.iter().zip(a).map(|(&u, &v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Rare-event contamination experiment
// ---------------------------------------------------------------------------

/// Mixture-vs-clean two-sample experiment: P = (1-eps) N(0,1) + eps
/// N(contam_mean, contam_std^2), Q = N(0,1).
#[derive(Debug, Clone)]
pub struct ContaminationConfig {
    pub eps: f64,
    pub contam_mean: f64,
    pub contam_std: f64,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            eps: 0.01,
            contam_mean: 10.0,
            contam_std: 0.1,
            sample_sizes: vec![200, 1000, 5000],
            replicates: 100,
        }
    }
}

/// One long-form result row.
#[derive(Debug, Clone)]
pub struct ContaminationRow {
    pub n: usize,
    pub replicate: usize,
    pub metric: MetricKind,
    pub estimate: f64,
    pub n_contam: usize,
}

/// Run the experiment: for every sample size and replicate, draw a fresh
/// contaminated/clean batch pair from a per-replicate stream and record every
/// metric's estimate together with the realized contamination count.
pub fn contamination_experiment(
    cfg: &ContaminationConfig,
    metrics: &[MetricSpec],
    seed: u64,
) -> Result<Vec<ContaminationRow>> {
    if !(cfg.eps >= 0.0 && cfg.eps < 1.0) {
        return Err(Error::Config(format!("contamination eps = {} outside [0, 1)", cfg.eps)));
    }
    let root = Stream::new(seed);
    let mut rows = Vec::new();
    for &n in &cfg.sample_sizes {
        for rep in 0..cfg.replicates {
            let mut s = root.substream(&[n as u64, rep as u64]);
            let mut p = Vec::with_capacity(n);
            let mut n_contam = 0usize;
            for _ in 0..n {
                if s.uniform() < cfg.eps {
                    n_contam += 1;
                    p.push(cfg.contam_mean + cfg.contam_std * s.normal());
                } else {
                    p.push(s.normal());
                }
            }
            let q: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let pb = SampleBatch::new(p, n, 1, 0, SpaceTag::Parameter);
            let qb = SampleBatch::new(q, n, 1, 0, SpaceTag::Parameter);
            for spec in metrics {
                let est = ipm::evaluate(&pb, &qb, spec)?;
                rows.push(ContaminationRow {
                    n,
                    replicate: rep,
                    metric: spec.kind,
                    estimate: est.value,
                    n_contam,
                });
            }
        }
    }
    Ok(rows)
}

/// Long-form CSV `n,replicate,metric,estimate,n_contam`.
pub fn contamination_csv(rows: &[ContaminationRow]) -> String {
    let mut out = String::from("n,replicate,metric,estimate,n_contam\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            r.replicate,
            r.metric.name(),
            r.estimate,
            r.n_contam
        ));
    }
    out
}

/// Ordinary least squares of estimate on contamination count for one
/// (n, metric) slice; returns (slope, r_squared). `None` when the counts are
/// constant (the detector is "not applicable", e.g. the eps = 0 control).
pub fn linear_response_fit(rows: &[ContaminationRow], n: usize, metric: MetricKind) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n == n && r.metric == metric)
        .map(|r| (r.n_contam as f64, r.estimate))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, sxy * sxy / (sxx * syy)))
}

/// Median estimate for one (n, metric) slice.
pub fn median_estimate(rows: &[ContaminationRow], n: usize, metric: MetricKind) -> f64 {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.n == n && r.metric == metric)
        .map(|r| r.estimate)
        .collect();
    median(&mut v)
}

// ---------------------------------------------------------------------------
// Shared 1-D numerics
// ---------------------------------------------------------------------------

fn simpson(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(points >= 3 && points % 2 == 1);
    let h = (hi - lo) / (points - 1) as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..points - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

// E |N(m, s^2)|, closed form; degenerates gracefully to |m| as s -> 0.
fn mean_abs_normal(m: f64, s: f64) -> f64 {
    if s <= 1e-300 {
        return m.abs();
    }
    let z = m / s;
    s * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * z * z).exp()
        + m * (1.0 - 2.0 * norm_cdf(-z))
}

// Closed-form IPM gamma(P, Q) between 1-D Gaussians for the three classes:
// W1 via the comonotone coupling, the anchored energy class via
// gamma^2 = ED^2 / 2, Gaussian-kernel MMD (bandwidth `kb`) via Gaussian
// convolution identities.
fn gaussian_ipm(kind: MetricKind, kb: f64, m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    match kind {
        MetricKind::W1_1D => mean_abs_normal(m1 - m2, (s1 - s2).abs()),
        MetricKind::Ed2 => {
            let cross = mean_abs_normal(m1 - m2, (s1 * s1 + s2 * s2).sqrt());
            let self1 = mean_abs_normal(0.0, s1 * std::f64::consts::SQRT_2);
            let self2 = mean_abs_normal(0.0, s2 * std::f64::consts::SQRT_2);
            (cross - 0.5 * (self1 + self2)).max(0.0).sqrt()
        }
        MetricKind::Mmd2 => {
            let ek = |dm: f64, v: f64| -> f64 {
                let t = kb * kb + v;
                kb / t.sqrt() * (-dm * dm / (2.0 * t)).exp()
            };
            let m2v = ek(0.0, 2.0 * s1 * s1) + ek(0.0, 2.0 * s2 * s2)
                - 2.0 * ek(m1 - m2, s1 * s1 + s2 * s2);
            m2v.max(0.0).sqrt()
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Theorem: likelihood stability
// ---------------------------------------------------------------------------

/// 1-D linear-Gaussian observation y = slope * x + intercept + N(0, sigma^2):
/// conjugate with a Gaussian prior, so utilities are exact quadratures over
/// closed-form prior/posterior IPM values.
#[derive(Debug, Clone)]
pub struct LinearObservation1D {
    pub slope: f64,
    pub intercept: f64,
    pub noise_sigma: f64,
}

// Kernel bandwidth used by every quadrature-side Gaussian-kernel MMD here;
// fixed (not data-driven) so both bound sides refer to the same metric.
const QUAD_MMD_BANDWIDTH: f64 = 1.0;

fn posterior_1d(model: &LinearObservation1D, prior: &Gaussian1D, y: f64) -> (f64, f64) {
    let s2 = model.noise_sigma * model.noise_sigma;
    let lambda = 1.0 / (prior.std * prior.std) + model.slope * model.slope / s2;
    let v = 1.0 / lambda;
    let m = v * (prior.mean / (prior.std * prior.std)
        + model.slope * (y - model.intercept) / s2);
    (m, v.sqrt())
}

fn linear_gaussian_utility(model: &LinearObservation1D, prior: &Gaussian1D, kind: MetricKind) -> f64 {
    let my = model.slope * prior.mean + model.intercept;
    let sy = (model.slope * model.slope * prior.std * prior.std
        + model.noise_sigma * model.noise_sigma)
        .sqrt();
    simpson(my - 8.0 * sy, my + 8.0 * sy, 513, |y| {
        let (mp, sp) = posterior_1d(model, prior, y);
        let g = gaussian_ipm(kind, QUAD_MMD_BANDWIDTH, prior.mean, prior.std, mp, sp);
        norm_pdf(y - my, sy) * g
    })
}

/// Check the likelihood-perturbation bound
/// |U - U*| <= Int Int (omega(x) + omega_bar) |p(y|x) - p*(y|x)| mu(dx) dy
/// for two conjugate observation models sharing a noise scale. Returns
/// (lhs, rhs); lhs <= rhs is the theorem.
pub fn likelihood_bound_check(
    true_model: &LinearObservation1D,
    perturbed: &LinearObservation1D,
    prior: &Gaussian1D,
    metric: &MetricSpec,
) -> Result<(f64, f64)> {
    match metric.kind {
        MetricKind::W1_1D | MetricKind::Ed2 | MetricKind::Mmd2 => {}
        other => {
            return Err(Error::Config(format!(
                "bound check unsupported for metric {}",
                other.name()
            )))
        }
    }
    if (true_model.noise_sigma - perturbed.noise_sigma).abs() > 1e-12 {
        return Err(Error::Config("bound check requires a shared noise scale".into()));
    }
    let u = linear_gaussian_utility(true_model, prior, metric.kind);
    let u_star = linear_gaussian_utility(perturbed, prior, metric.kind);
    let lhs = (u - u_star).abs();

    // anchor at the prior mean for the unbounded classes
    let profile = GrowthProfile::new(metric.kind, prior.mean)?;
    let omega_bar = profile.expected_under(prior);
    let sigma = true_model.noise_sigma;
    let rhs = simpson(
        prior.mean - 8.0 * prior.std,
        prior.mean + 8.0 * prior.std,
        513,
        |x| {
            let d = ((true_model.slope - perturbed.slope) * x
                + (true_model.intercept - perturbed.intercept))
                .abs();
            // Int |phi_sigma(y - u) - phi_sigma(y - v)| dy with |u - v| = d
            let l1 = 2.0 * (2.0 * norm_cdf(d / (2.0 * sigma)) - 1.0);
            (profile.eval(x) + omega_bar) * l1 * norm_pdf(x - prior.mean, prior.std)
        },
    );
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// Proposition constants and the prior-stability theorem
// ---------------------------------------------------------------------------

/// Explicit local constants (C_E(y), C_L(y)) of the compact-domain model
/// Y = X + N(0, sigma^2) on [0, R], anchored at 0:
/// W1: sup |phi'| and sup phi + R sup |phi'|;
/// energy class: L2 norm of phi' and sup phi + sqrt(R) * that L2 norm.
/// (The Matern-MMD row needs Sobolev multiplier constants and is out of
/// scope; the Gaussian-kernel MMD constants used by the bound check are
/// computed separately.)
pub fn prop_constants(y: f64, r: f64, sigma: f64, metric: MetricKind) -> Result<(f64, f64)> {
    if !(r > 0.0 && sigma > 0.0) {
        return Err(Error::Config("prop_constants requires R > 0 and sigma > 0".into()));
    }
    let sup_phi = norm_pdf(y.clamp(0.0, r) - y, sigma);
    // |phi'| is maximized at |z| = sigma, or at the interval ends
    let sup_dphi = [y - sigma, y + sigma, 0.0, r]
        .iter()
        .filter(|&&x| (0.0..=r).contains(&x))
        .map(|&x| {
            let z = y - x;
            (z / (sigma * sigma) * norm_pdf(z, sigma)).abs()
        })
        .fold(0.0f64, f64::max);
    match metric {
        MetricKind::W1_1D => Ok((sup_dphi, sup_phi + r * sup_dphi)),
        MetricKind::Ed2 => {
            let l2_dphi = simpson(0.0, r, 257, |x| {
                let z = y - x;
                let d = z / (sigma * sigma) * norm_pdf(z, sigma);
                d * d
            })
            .max(0.0)
            .sqrt();
            Ok((l2_dphi, sup_phi + r.sqrt() * l2_dphi))
        }
        other => Err(Error::Config(format!(
            "prop_constants covers W1 and the energy class, not {}",
            other.name()
        ))),
    }
}

/// A measure on [0, R] for the prior-stability check: either a truncated
/// Gaussian density or a finite atom list.
#[derive(Debug, Clone)]
pub enum Measure1D {
    TruncatedGaussian { mean: f64, sd: f64 },
    Discrete { atoms: Vec<f64> },
}

impl Measure1D {
    /// Equal-mass quantile discretization of a truncated Gaussian.
    pub fn quantile_discretization(mean: f64, sd: f64, r: f64, points: usize) -> Self {
        // invert the truncated CDF on a fine grid
        let grid = 4097usize;
        let h = r / (grid - 1) as f64;
        let mut cdf = Vec::with_capacity(grid);
        let mut acc = 0.0;
        let pdf = |x: f64| norm_pdf(x - mean, sd);
        let mut prev = pdf(0.0);
        cdf.push(0.0);
        for i in 1..grid {
            let cur = pdf(i as f64 * h);
            acc += 0.5 * (prev + cur) * h;
            cdf.push(acc);
            prev = cur;
        }
        let total = *cdf.last().unwrap();
        let atoms = (0..points)
            .map(|i| {
                let target = (i as f64 + 0.5) / points as f64 * total;
                let j = cdf.partition_point(|&c| c < target).min(grid - 1);
                j as f64 * h
            })
            .collect();
        Measure1D::Discrete { atoms }
    }

    // weighted atoms on [0, R]; continuous measures are discretized on the
    // quadrature grid with trapezoid weights
    fn atoms(&self, r: f64, grid: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Measure1D::TruncatedGaussian { mean, sd } => {
                let h = r / (grid - 1) as f64;
                let xs: Vec<f64> = (0..grid).map(|i| i as f64 * h).collect();
                let mut ws: Vec<f64> =
                    xs.iter().map(|&x| norm_pdf(x - mean, *sd)).collect();
                ws[0] *= 0.5;
                ws[grid - 1] *= 0.5;
                let tot: f64 = ws.iter().sum();
                for w in ws.iter_mut() {
                    *w /= tot;
                }
                (xs, ws)
            }
            Measure1D::Discrete { atoms } => {
                let w = 1.0 / atoms.len() as f64;
                (atoms.clone(), vec![w; atoms.len()])
            }
        }
    }
}

// gamma between weighted atom lists for the three function classes
// (W1 and the anchored energy class via exact CDF integrals over the merged
// support; Gaussian-kernel MMD via kernel sums).
fn atom_ipm(
    kind: MetricKind,
    kb: f64,
    xs_p: &[f64],
    ws_p: &[f64],
    xs_q: &[f64],
    ws_q: &[f64],
) -> f64 {
    match kind {
        MetricKind::W1_1D | MetricKind::Ed2 => {
            // merged-support CDF difference
            let mut events: Vec<(f64, f64)> = xs_p
                .iter()
                .zip(ws_p)
                .map(|(&x, &w)| (x, w))
                .chain(xs_q.iter().zip(ws_q).map(|(&x, &w)| (x, -w)))
                .collect();
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0; // F_P - F_Q so far
            let mut w1 = 0.0;
            let mut ed = 0.0;
            for i in 0..events.len() {
                acc += events[i].1;
                if i + 1 < events.len() {
                    let dt = events[i + 1].0 - events[i].0;
                    w1 += acc.abs() * dt;
                    ed += acc * acc * dt;
                }
            }
            if kind == MetricKind::W1_1D {
                w1
            } else {
                ed.max(0.0).sqrt()
            }
        }
        MetricKind::Mmd2 => {
            let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * kb * kb)).exp();
            let mut acc = 0.0;
            for (i, &xi) in xs_p.iter().enumerate() {
                for (j, &xj) in xs_p.iter().enumerate() {
                    acc += ws_p[i] * ws_p[j] * k(xi, xj);
                }
            }
            for (i, &xi) in xs_q.iter().enumerate() {
                for (j, &xj) in xs_q.iter().enumerate() {
                    acc += ws_q[i] * ws_q[j] * k(xi, xj);
                }
            }
            for (i, &xi) in xs_p.iter().enumerate() {
                for (j, &xj) in xs_q.iter().enumerate() {
                    acc -= 2.0 * ws_p[i] * ws_q[j] * k(xi, xj);
                }
            }
            acc.max(0.0).sqrt()
        }
        _ => unreachable!(),
    }
}

// Gaussian-kernel RKHS norm of x -> phi_sigma(y - x) over the whole line
// (closed form; an upper bound for the restriction norm, valid as C_E).
// Finite only for kb < sigma * sqrt(2).
fn gauss_rkhs_evidence_norm(sigma: f64, kb: f64) -> Result<f64> {
    let denom = sigma * sigma - kb * kb / 2.0;
    if denom <= 0.0 {
        return Err(Error::Config(
            "kernel bandwidth too large for a finite evidence norm".into(),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let val = 1.0 / (two_pi * kb * two_pi.sqrt()) * (std::f64::consts::PI / denom).sqrt();
    Ok(val.sqrt())
}

// Numerical multiplication-operator norm sup { ||f * p|| : ||f|| <= 1 } on
// the grid-restricted Gaussian RKHS, by generalized power iteration with a
// ridge-stabilized Cholesky solve.
fn gauss_rkhs_multiplier_norm(p_vals: &[f64], xs: &[f64], kb: f64) -> f64 {
    let n = xs.len();
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * kb * kb)).exp();
    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            kmat[i * n + j] = k(xs[i], xs[j]);
        }
        kmat[i * n + i] += 1e-10;
    }
    // Cholesky
    let mut l = kmat.clone();
    for i in 0..n {
        for j in 0..=i {
            let mut s = l[i * n + j];
            for t in 0..j {
                s -= l[i * n + t] * l[j * n + t];
            }
            if i == j {
                l[i * n + i] = s.max(1e-30).sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
        for j in i + 1..n {
            l[i * n + j] = 0.0;
        }
    }
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for t in 0..i {
                s -= l[i * n + t] * y[t];
            }
            y[i] = s / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for t in i + 1..n {
                s -= l[t * n + i] * x[t];
            }
            x[i] = s / l[i * n + i];
        }
        x
    };
    let matvec = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| kmat[i * n + j] * v[j]).sum())
            .collect()
    };
    // iterate alpha <- D_p K^{-1} D_p K alpha; the Rayleigh quotient
    // alpha' K D_p K^{-1} D_p K alpha / alpha' K alpha converges to C_L^2
    let mut alpha: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 - 0.5).collect();
    let mut lam = 0.0;
    for _ in 0..60 {
        let ka = matvec(&alpha);
        let dka: Vec<f64> = ka.iter().zip(p_vals).map(|(&v, &p)| v * p).collect();
        let kidka = solve(&dka);
        let next: Vec<f64> = kidka.iter().zip(p_vals).map(|(&v, &p)| v * p).collect();
        // Rayleigh quotient pieces
        let num: f64 = dka.iter().zip(&kidka).map(|(&a, &b)| a * b).sum();
        let den: f64 = alpha.iter().zip(&ka).map(|(&a, &b)| a * b).sum();
        if den.abs() < 1e-280 {
            break;
        }
        lam = num / den;
        let norm = next.iter().map(|&v| v * v).sum::<f64>().sqrt().max(1e-280);
        alpha = next.iter().map(|&v| v / norm).collect();
    }
    lam.max(0.0).sqrt()
}

/// Check the prior-perturbation bound |U - U~| <= K_bar * gamma(mu, mu~) on
/// the compact-domain model Y = X + N(0, sigma^2), X in [0, R], with
/// K_bar = 1 + Int (C_L(y) + 2 C_E(y) D(y)) dy and D(y) = gamma(mu~, mu~^y).
/// Returns (lhs, rhs).
pub fn prior_bound_check(
    prior: &Measure1D,
    perturbed: &Measure1D,
    r: f64,
    sigma: f64,
    metric: &MetricSpec,
) -> Result<(f64, f64)> {
    match metric.kind {
        MetricKind::W1_1D | MetricKind::Ed2 | MetricKind::Mmd2 => {}
        other => {
            return Err(Error::Config(format!(
                "bound check unsupported for metric {}",
                other.name()
            )))
        }
    }
    if !(r > 0.0 && sigma > 0.0) {
        return Err(Error::Config("prior_bound_check requires R > 0 and sigma > 0".into()));
    }
    let kind = metric.kind;
    let kb = (sigma / 2.0).min(QUAD_MMD_BANDWIDTH); // finite evidence norm: kb < sigma * sqrt(2)
    let grid = 257;
    let (xs_p, ws_p) = prior.atoms(r, grid);
    let (xs_q, ws_q) = perturbed.atoms(r, grid);

    // utility of a weighted-atom prior: U = Int m(y) gamma(mu, mu^y) dy
    let utility = |xs: &[f64], ws: &[f64]| -> f64 {
        simpson(-8.0 * sigma, r + 8.0 * sigma, 257, |y| {
            let lik: Vec<f64> = xs.iter().map(|&x| norm_pdf(y - x, sigma)).collect();
            let m: f64 = ws.iter().zip(&lik).map(|(&w, &l)| w * l).sum();
            if m <= 1e-280 {
                return 0.0;
            }
            let wpost: Vec<f64> = ws.iter().zip(&lik).map(|(&w, &l)| w * l / m).collect();
            m * atom_ipm(kind, kb, xs, ws, xs, &wpost)
        })
    };
    let lhs = (utility(&xs_p, &ws_p) - utility(&xs_q, &ws_q)).abs();

    let gamma_priors = atom_ipm(kind, kb, &xs_p, &ws_p, &xs_q, &ws_q);

    // MMD constants for the bounded-kernel class; W1/energy from Prop 3
    let mmd_ce = if kind == MetricKind::Mmd2 {
        gauss_rkhs_evidence_norm(sigma, kb)?
    } else {
        0.0
    };
    let integrand = |y: f64| -> Result<f64> {
        let (ce, cl) = match kind {
            MetricKind::Mmd2 => {
                let p_vals: Vec<f64> = xs_q.iter().map(|&x| norm_pdf(y - x, sigma)).collect();
                // multiplier norm on a thinned grid for tractability
                let step = (xs_q.len() / 64).max(1);
                let xs_thin: Vec<f64> = xs_q.iter().step_by(step).copied().collect();
                let p_thin: Vec<f64> = p_vals.iter().step_by(step).copied().collect();
                (mmd_ce, gauss_rkhs_multiplier_norm(&p_thin, &xs_thin, kb))
            }
            k => prop_constants(y, r, sigma, k)?,
        };
        let lik: Vec<f64> = xs_q.iter().map(|&x| norm_pdf(y - x, sigma)).collect();
        let m: f64 = ws_q.iter().zip(&lik).map(|(&w, &l)| w * l).sum();
        let d = if m <= 1e-280 {
            0.0
        } else {
            let wpost: Vec<f64> = ws_q.iter().zip(&lik).map(|(&w, &l)| w * l / m).collect();
            atom_ipm(kind, kb, &xs_q, &ws_q, &xs_q, &wpost)
        };
        Ok(cl + 2.0 * ce * d)
    };
    // Simpson over y with error propagation
    let (lo, hi, pts) = (-8.0 * sigma, r + 8.0 * sigma, 129usize);
    let h = (hi - lo) / (pts - 1) as f64;
    let mut acc = integrand(lo)? + integrand(hi)?;
    for i in 1..pts - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + i as f64 * h)?;
    }
    let kbar = 1.0 + acc * h / 3.0;
    Ok((lhs, kbar * gamma_priors))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Bound-check CSV `case,metric,lhs,rhs`.
pub fn bound_check_csv(rows: &[(String, MetricKind, f64, f64)]) -> String {
    let mut out = String::from("case,metric,lhs,rhs\n");
    for (case, metric, lhs, rhs) in rows {
        out.push_str(&format!("{case},{},{lhs},{rhs}\n", metric.name()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w1() -> MetricSpec {
        MetricSpec::new(MetricKind::W1_1D)
    }

    #[test]
    fn growth_profiles_match_their_classes() {
        let gp = GrowthProfile::new(MetricKind::Mmd2, 0.0).unwrap();
        assert_eq!(gp.eval(123.0), 1.0);
        let gp = GrowthProfile::new(MetricKind::W1_1D, 0.0).unwrap();
        assert_eq!(gp.eval(3.0), 3.0);
        let gp = GrowthProfile::new(MetricKind::Ed2, 0.0).unwrap();
        assert_eq!(gp.eval(4.0), 2.0);
        assert!(GrowthProfile::new(MetricKind::KlKde, 0.0).is_err());
    }

    #[test]
    fn expected_growth_matches_monte_carlo() {
        let prior = Gaussian1D { mean: 0.7, std: 1.3 };
        for kind in [MetricKind::W1_1D, MetricKind::Ed2] {
            let gp = GrowthProfile::new(kind, prior.mean).unwrap();
            let quad = gp.expected_under(&prior);
            let mut s = Stream::new(5);
            let n = 200_000;
            let draws: Vec<f64> =
                (0..n).map(|_| gp.eval(prior.mean + prior.std * s.normal())).collect();
            let mc = crate::math::mean(&draws);
            let se = crate::math::std_error(&draws);
            assert!(
                (quad - mc).abs() <= 3.0 * se,
                "{kind:?}: quad {quad} vs mc {mc} (se {se})"
            );
        }
    }

    #[test]
    fn identical_likelihoods_give_zero_bound() {
        let m = LinearObservation1D { slope: 1.0, intercept: 0.0, noise_sigma: 0.5 };
        let prior = Gaussian1D { mean: 0.0, std: 1.0 };
        let (lhs, rhs) = likelihood_bound_check(&m, &m.clone(), &prior, &w1()).unwrap();
        assert!(lhs.abs() < 1e-12);
        assert!(rhs.abs() < 1e-12);
    }

    #[test]
    fn mean_shift_bound_holds_and_scales_linearly() {
        let prior = Gaussian1D { mean: 0.0, std: 1.0 };
        let m = LinearObservation1D { slope: 1.0, intercept: 0.0, noise_sigma: 0.5 };
        let mut rhs_by_c = Vec::new();
        for c in [0.05, 0.1, 0.2] {
            let p = LinearObservation1D { slope: 1.0, intercept: c, noise_sigma: 0.5 };
            let (lhs, rhs) = likelihood_bound_check(&m, &p, &prior, &w1()).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-9), "c {c}: lhs {lhs} rhs {rhs}");
            rhs_by_c.push(rhs);
        }
        // approximate first-order linearity in the perturbation scale
        let r1 = rhs_by_c[1] / rhs_by_c[0];
        let r2 = rhs_by_c[2] / rhs_by_c[1];
        assert!((r1 - 2.0).abs() < 0.3, "ratio {r1}");
        assert!((r2 - 2.0).abs() < 0.3, "ratio {r2}");
    }

    #[test]
    fn likelihood_bound_holds_on_randomized_instances() {
        let mut s = Stream::new(99);
        for kind in [MetricKind::W1_1D, MetricKind::Ed2, MetricKind::Mmd2] {
            for _ in 0..100 {
                let prior = Gaussian1D {
                    mean: 2.0 * s.uniform() - 1.0,
                    std: 0.5 + 1.5 * s.uniform(),
                };
                let sigma = 0.3 + 0.7 * s.uniform();
                let a = 0.5 + 1.5 * s.uniform();
                let b = 2.0 * s.uniform() - 1.0;
                let m = LinearObservation1D { slope: a, intercept: b, noise_sigma: sigma };
                let p = LinearObservation1D {
                    slope: a * (1.0 + 0.1 * (s.uniform() - 0.5)),
                    intercept: b + 0.1 * (s.uniform() - 0.5),
                    noise_sigma: sigma,
                };
                let (lhs, rhs) =
                    likelihood_bound_check(&m, &p, &prior, &MetricSpec::new(kind)).unwrap();
                assert!(
                    lhs <= rhs * (1.0 + 1e-9) + 1e-12,
                    "{kind:?}: lhs {lhs} rhs {rhs}"
                );
            }
        }
    }

    #[test]
    fn prop_constants_match_grid_search() {
        let (r, sigma) = (1.0, 0.3);
        for &y in &[0.5, 0.2, r + 10.0 * sigma] {
            let (ce, cl) = prop_constants(y, r, sigma, MetricKind::W1_1D).unwrap();
            let grid_ce = (0..100_000)
                .map(|i| {
                    let x = r * i as f64 / 99_999.0;
                    let z = y - x;
                    (z / (sigma * sigma) * norm_pdf(z, sigma)).abs()
                })
                .fold(0.0f64, f64::max);
            assert!((ce - grid_ce).abs() < 1e-6 * (1.0 + grid_ce), "y {y}: {ce} vs {grid_ce}");
            assert!(cl >= ce * r, "C_L must dominate R * C_E");
        }
        // Gaussian tail decay
        let far = r + 10.0 * sigma;
        let (ce_far, _) = prop_constants(far, r, sigma, MetricKind::W1_1D).unwrap();
        let (ce_farther, _) = prop_constants(far + sigma, r, sigma, MetricKind::W1_1D).unwrap();
        assert!(ce_farther < ce_far);
        // energy class: C_L exceeds the sup-phi term alone
        let (_, cl_ed) = prop_constants(0.5, r, sigma, MetricKind::Ed2).unwrap();
        assert!(cl_ed >= norm_pdf(0.0, sigma));
    }

    #[test]
    fn identical_priors_give_zero_bound() {
        let mu = Measure1D::TruncatedGaussian { mean: 0.5, sd: 0.2 };
        let (lhs, rhs) = prior_bound_check(&mu, &mu.clone(), 1.0, 0.3, &w1()).unwrap();
        assert!(lhs < 1e-10, "lhs {lhs}");
        assert!(rhs < 1e-10, "rhs {rhs}");
    }

    #[test]
    fn discretized_prior_bound_holds_and_refines() {
        let r = 1.0;
        let mu = Measure1D::TruncatedGaussian { mean: 0.5 * r, sd: 0.2 * r };
        let mut prev_lhs = f64::INFINITY;
        for points in [200usize, 400, 800, 1600] {
            let tilde = Measure1D::quantile_discretization(0.5 * r, 0.2 * r, r, points);
            let (lhs, rhs) = prior_bound_check(&mu, &tilde, r, 0.3, &w1()).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-9), "points {points}: lhs {lhs} rhs {rhs}");
            assert!(
                lhs <= prev_lhs * (1.0 + 1e-6),
                "points {points}: lhs {lhs} did not refine below {prev_lhs}"
            );
            prev_lhs = lhs;
        }
    }

    #[test]
    fn prior_bound_holds_on_randomized_instances() {
        let mut s = Stream::new(7);
        for kind in [MetricKind::W1_1D, MetricKind::Ed2, MetricKind::Mmd2] {
            for _ in 0..100 {
                let r = 0.5 + s.uniform();
                let sigma = (0.25 + 0.35 * s.uniform()) * r;
                let mean = r * (0.2 + 0.6 * s.uniform());
                let sd = r * (0.1 + 0.3 * s.uniform());
                let points = 100 + (s.uniform() * 300.0) as usize;
                let mu = Measure1D::TruncatedGaussian { mean, sd };
                let tilde = Measure1D::quantile_discretization(mean, sd, r, points);
                let (lhs, rhs) =
                    prior_bound_check(&mu, &tilde, r, sigma, &MetricSpec::new(kind)).unwrap();
                assert!(
                    lhs <= rhs * (1.0 + 1e-9) + 1e-12,
                    "{kind:?}: lhs {lhs} rhs {rhs} (r {r} sigma {sigma})"
                );
            }
        }
    }

    #[test]
    fn contamination_rows_and_csv_shape() {
        let cfg = ContaminationConfig {
            sample_sizes: vec![50],
            replicates: 4,
            ..ContaminationConfig::default()
        };
        let rows =
            contamination_experiment(&cfg, &[w1(), MetricSpec::new(MetricKind::KlKde)], 3).unwrap();
        assert_eq!(rows.len(), 8);
        let csv = contamination_csv(&rows);
        assert!(csv.starts_with("n,replicate,metric,estimate,n_contam\n"));
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn contamination_control_detector_not_applicable() {
        let cfg = ContaminationConfig {
            eps: 0.0,
            sample_sizes: vec![200],
            replicates: 20,
            ..ContaminationConfig::default()
        };
        let rows = contamination_experiment(&cfg, &[MetricSpec::new(MetricKind::KlKde)], 11).unwrap();
        assert!(rows.iter().all(|r| r.n_contam == 0));
        assert!(linear_response_fit(&rows, 200, MetricKind::KlKde).is_none());
    }

    #[test]
    fn contamination_is_deterministic() {
        let cfg = ContaminationConfig {
            sample_sizes: vec![100],
            replicates: 3,
            ..ContaminationConfig::default()
        };
        let a = contamination_experiment(&cfg, &[w1()], 5).unwrap();
        let b = contamination_experiment(&cfg, &[w1()], 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.estimate.to_bits(), y.estimate.to_bits());
            assert_eq!(x.n_contam, y.n_contam);
        }
    }
}
