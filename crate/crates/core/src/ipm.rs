//! Sample-based discrepancy estimators between two batches.
//!
//! All estimators are pure functions over immutable batches:
//! - [`w1_empirical_1d`]: exact 1-D optimal transport cost between empirical
//!   measures of equal size (sorted pairing).
//! - [`mmd2_unbiased`]: unbiased U-statistic MMD^2 with a Gaussian kernel.
//! - [`energy_distance2`]: unbiased squared energy distance (U-statistic form).
//! - [`kl_kde`]: plug-in KL estimate through two Gaussian KDEs (1-D only).

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Which discrepancy estimator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    W1_1D,
    Mmd2,
    Ed2,
    KlKde,
    W2Sinkhorn,
    W2Icnn,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::W1_1D => "w1",
            MetricKind::Mmd2 => "mmd2",
            MetricKind::Ed2 => "ed2",
            MetricKind::KlKde => "kl",
            MetricKind::W2Sinkhorn => "w2_sinkhorn",
            MetricKind::W2Icnn => "w2_icnn",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        Some(match s {
            "w1" => MetricKind::W1_1D,
            "mmd2" | "mmd" => MetricKind::Mmd2,
            "ed2" | "ed" => MetricKind::Ed2,
            "kl" | "kl_kde" => MetricKind::KlKde,
            "w2_sinkhorn" | "sinkhorn" => MetricKind::W2Sinkhorn,
            "w2_icnn" | "icnn" => MetricKind::W2Icnn,
            _ => return None,
        })
    }
}

/// Kernel bandwidth selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Median of pairwise distances on the pooled sample.
    MedianHeuristic,
    Fixed(f64),
    /// Silverman's rule per batch (KDE only).
    Silverman,
}

/// Discrepancy selector plus hyperparameters.
///
/// The `anchor` is only used by the stability module's growth envelopes; the
/// estimators themselves are anchor-free.
#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub bandwidth_rule: BandwidthRule,
    pub anchor: Option<Vec<f64>>,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        let bandwidth_rule = match kind {
            MetricKind::KlKde => BandwidthRule::Silverman,
            _ => BandwidthRule::MedianHeuristic,
        };
        MetricSpec { kind, bandwidth_rule, anchor: None }
    }

    pub fn with_bandwidth(mut self, rule: BandwidthRule) -> Self {
        self.bandwidth_rule = rule;
        self
    }
}

/// A discrepancy value with the batch sizes that produced it.
#[derive(Debug, Clone)]
pub struct DiscrepancyEstimate {
    pub value: f64,
    pub n_p: usize,
    pub n_q: usize,
    pub metric: MetricSpec,
}

impl DiscrepancyEstimate {
    /// Square root accessor for squared quantities (ED, MMD); clamps the
    /// slightly-negative unbiased estimates to zero first.
    pub fn sqrt(&self) -> f64 {
        self.value.max(0.0).sqrt()
    }
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Exact 1-D W1 between equal-size empirical measures: mean absolute
/// difference of the sorted order statistics.
pub fn w1_empirical_1d(p: &SampleBatch, q: &SampleBatch) -> Result<DiscrepancyEstimate> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::UnsupportedDimension { dim: p.dim().max(q.dim()) });
    }
    if p.len() != q.len() {
        return Err(Error::SizeMismatch { n_p: p.len(), n_q: q.len() });
    }
    let xs = sorted_copy(p.scalars());
    let ys = sorted_copy(q.scalars());
    let total: f64 = xs.iter().zip(&ys).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(DiscrepancyEstimate {
        value: total / xs.len() as f64,
        n_p: p.len(),
        n_q: q.len(),
        metric: MetricSpec::new(MetricKind::W1_1D),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

// Order the pair of batches canonically so symmetric estimators are
// bit-identical under argument swap.
fn canonical<'a>(p: &'a SampleBatch, q: &'a SampleBatch) -> (&'a SampleBatch, &'a SampleBatch, bool) {
    let swap = match p.len().cmp(&q.len()) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => {
            matches!(
                p.as_slice().partial_cmp(q.as_slice()),
                Some(std::cmp::Ordering::Greater)
            )
        }
    };
    if swap {
        (q, p, true)
    } else {
        (p, q, false)
    }
}

/// Unbiased U-statistic MMD^2 with the Gaussian kernel
/// k(x, y) = exp(-||x - y||^2 / (2 h^2)).
pub fn mmd2_unbiased(p: &SampleBatch, q: &SampleBatch, spec: &MetricSpec) -> Result<DiscrepancyEstimate> {
    let (n_p, n_q) = (p.len(), q.len());
    if n_p < 2 || n_q < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n_p.min(n_q) });
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let h = match spec.bandwidth_rule {
        BandwidthRule::Fixed(h) => {
            if h <= 0.0 {
                return Err(Error::DegenerateBandwidth);
            }
            h
        }
        _ => median_heuristic_bandwidth(p, q)?,
    };
    let (a, b, _) = canonical(p, q);
    let inv2h2 = 1.0 / (2.0 * h * h);
    let kern = |x: &[f64], y: &[f64]| (-sq_dist(x, y) * inv2h2).exp();

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut within_a = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            within_a += kern(a.row(i), a.row(j));
        }
    }
    let mut within_b = 0.0;
    for i in 0..b.len() {
        for j in (i + 1)..b.len() {
            within_b += kern(b.row(i), b.row(j));
        }
    }
    let mut cross = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            cross += kern(a.row(i), b.row(j));
        }
    }
    let value = 2.0 * within_a / (na * (na - 1.0)) + 2.0 * within_b / (nb * (nb - 1.0))
        - 2.0 * cross / (na * nb);
    Ok(DiscrepancyEstimate { value, n_p, n_q, metric: spec.clone() })
}

/// Unbiased squared energy distance
/// ED^2 = 2 E|X-Y| - E|X-X'| - E|Y-Y'| with Euclidean distance, U-statistic form.
pub fn energy_distance2(p: &SampleBatch, q: &SampleBatch) -> Result<DiscrepancyEstimate> {
    let (n_p, n_q) = (p.len(), q.len());
    if n_p < 2 || n_q < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n_p.min(n_q) });
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let (a, b, _) = canonical(p, q);
    let dist = |x: &[f64], y: &[f64]| sq_dist(x, y).sqrt();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut within_a = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            within_a += dist(a.row(i), a.row(j));
        }
    }
    let mut within_b = 0.0;
    for i in 0..b.len() {
        for j in (i + 1)..b.len() {
            within_b += dist(b.row(i), b.row(j));
        }
    }
    let mut cross = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            cross += dist(a.row(i), b.row(j));
        }
    }
    let value = 2.0 * cross / (na * nb)
        - 2.0 * within_a / (na * (na - 1.0))
        - 2.0 * within_b / (nb * (nb - 1.0));
    Ok(DiscrepancyEstimate {
        value,
        n_p,
        n_q,
        metric: MetricSpec::new(MetricKind::Ed2),
    })
}

fn silverman_bandwidth(v: &[f64]) -> Result<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let s = sorted_copy(v);
    let quant = |q: f64| {
        let idx = q * (s.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (idx - lo as f64)
    };
    let iqr = quant(0.75) - quant(0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * n.powf(-0.2);
    if h <= 0.0 || !h.is_finite() {
        Err(Error::DegenerateBandwidth)
    } else {
        Ok(h)
    }
}

/// Plug-in KL estimate (1/n_p) sum_i log(p_hat(x_i) / q_hat(x_i)) with
/// Gaussian-kernel KDEs fit on P and Q; densities floored at 1e-300.
pub fn kl_kde(p: &SampleBatch, q: &SampleBatch, spec: &MetricSpec) -> Result<DiscrepancyEstimate> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::UnsupportedDimension { dim: p.dim().max(q.dim()) });
    }
    let (h_p, h_q) = match spec.bandwidth_rule {
        BandwidthRule::Fixed(h) => {
            if h <= 0.0 {
                return Err(Error::DegenerateBandwidth);
            }
            (h, h)
        }
        _ => (silverman_bandwidth(p.scalars())?, silverman_bandwidth(q.scalars())?),
    };
    const FLOOR: f64 = 1e-300;
    let kde = |pts: &[f64], h: f64, x: f64| -> f64 {
        let inv2h2 = 1.0 / (2.0 * h * h);
        let sum: f64 = pts.iter().map(|&xi| (-(x - xi) * (x - xi) * inv2h2).exp()).sum();
        (sum / (pts.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())).max(FLOOR)
    };
    let xs = p.scalars();
    let qs = q.scalars();
    let mut acc = 0.0;
    for &x in xs {
        acc += kde(xs, h_p, x).ln() - kde(qs, h_q, x).ln();
    }
    Ok(DiscrepancyEstimate {
        value: acc / xs.len() as f64,
        n_p: p.len(),
        n_q: q.len(),
        metric: spec.clone(),
    })
}

/// Median pairwise Euclidean distance over the pooled batch, subsampled to
/// at most 2000 points. Standard MMD bandwidth practice.
pub fn median_heuristic_bandwidth(p: &SampleBatch, q: &SampleBatch) -> Result<f64> {
    const MAX_POOL: usize = 2000;
    let total = p.len() + q.len();
    let mut pool: Vec<&[f64]> = Vec::with_capacity(total.min(MAX_POOL));
    if total <= MAX_POOL {
        pool.extend(p.rows());
        pool.extend(q.rows());
    } else {
        // Deterministic strided subsample, proportional per batch.
        let take_p = (p.len() * MAX_POOL) / total;
        let take_q = MAX_POOL - take_p;
        for k in 0..take_p {
            pool.push(p.row(k * p.len() / take_p));
        }
        for k in 0..take_q {
            pool.push(q.row(k * q.len() / take_q));
        }
    }
    let m = pool.len();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(sq_dist(pool[i], pool[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = dists.len();
    let med = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if med <= 0.0 {
        Err(Error::DegenerateBandwidth)
    } else {
        Ok(med)
    }
}

/// Dispatch for the four direct sample-based estimators. The two W2 variants
/// live in [`crate::neuralot`] and are wired up by the engine.
pub fn evaluate(p: &SampleBatch, q: &SampleBatch, spec: &MetricSpec) -> Result<DiscrepancyEstimate> {
    match spec.kind {
        MetricKind::W1_1D => w1_empirical_1d(p, q),
        MetricKind::Mmd2 => mmd2_unbiased(p, q, spec),
        MetricKind::Ed2 => energy_distance2(p, q),
        MetricKind::KlKde => kl_kde(p, q, spec),
        MetricKind::W2Sinkhorn | MetricKind::W2Icnn => {
            Err(Error::Config("W2 estimators are evaluated through the engine".into()))
        }
    }
}
