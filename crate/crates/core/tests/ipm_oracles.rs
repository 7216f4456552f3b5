//! Oracle and property tests for the discrepancy estimators.
//!
//! Every non-trivial expected value below is computed by an independent
//! in-test oracle (closed form double-checked by quadrature), not by the
//! estimator under test.

use boed_core::ipm::{
    energy_distance2, kl_kde, median_heuristic_bandwidth, mmd2_unbiased, w1_empirical_1d,
    BandwidthRule, MetricKind, MetricSpec,
};
use boed_core::math::{mean, norm_cdf};
use boed_core::{SampleBatch, SpaceTag, Stream};
use proptest::prelude::*;

fn gaussian_batch(stream: &mut Stream, n: usize, mu: f64, sigma: f64) -> SampleBatch {
    let v: Vec<f64> = (0..n).map(|_| mu + sigma * stream.normal()).collect();
    SampleBatch::from_scalar(v, 0, SpaceTag::Parameter)
}

fn batch(v: Vec<f64>) -> SampleBatch {
    SampleBatch::from_scalar(v, 0, SpaceTag::Parameter)
}

/// Standard normal quantile by bisection on the CDF.
fn norm_quantile(u: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if norm_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Simpson's rule on a uniform grid (odd number of points).
fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    assert!(n % 2 == 0);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// E|D| for D ~ N(m, s^2): folded-normal mean.
fn folded_mean(m: f64, s: f64) -> f64 {
    m * (1.0 - 2.0 * norm_cdf(-m / s)) + s * (2.0 / std::f64::consts::PI).sqrt() * (-m * m / (2.0 * s * s)).exp()
}

/// E exp(-Z^2 / (2 h^2)) for Z ~ N(m, s^2), closed form.
fn gauss_kernel_mean(m: f64, s2: f64, h: f64) -> f64 {
    let h2 = h * h;
    (h2 / (h2 + s2)).sqrt() * (-m * m / (2.0 * (h2 + s2))).exp()
}

#[test]
fn w1_gaussian_shift_matches_quantile_oracle() {
    // Oracle: W1 = int_0^1 |F_P^{-1}(u) - F_Q^{-1}(u)| du. For N(0,1) vs
    // N(3,1) the quantile gap is the constant 3.
    let oracle = simpson(1e-6, 1.0 - 1e-6, 2000, |u| {
        (norm_quantile(u) - (3.0 + norm_quantile(u))).abs()
    });
    assert!((oracle - 3.0).abs() < 1e-4, "quantile oracle {oracle}");

    let mut s = Stream::new(11).substream(&[1]);
    let p = gaussian_batch(&mut s, 10_000, 0.0, 1.0);
    let q = gaussian_batch(&mut s, 10_000, 3.0, 1.0);
    let est = w1_empirical_1d(&p, &q).unwrap().value;
    assert!((est - 3.0).abs() < 0.05, "w1 estimate {est}");
}

#[test]
fn mmd2_null_is_unbiased() {
    let spec = MetricSpec::new(MetricKind::Mmd2).with_bandwidth(BandwidthRule::Fixed(1.0));
    let root = Stream::new(17);
    let mut vals = Vec::new();
    for r in 0..200u64 {
        let mut s = root.substream(&[r]);
        let p = gaussian_batch(&mut s, 2000, 0.0, 1.0);
        let q = gaussian_batch(&mut s, 2000, 0.0, 1.0);
        vals.push(mmd2_unbiased(&p, &q, &spec).unwrap().value);
    }
    let m = mean(&vals);
    let se = boed_core::math::std_error(&vals);
    assert!(m.abs() <= 3.0 * se, "null mean {m} vs 3 SE {}", 3.0 * se);
}

#[test]
fn mmd2_separated_gaussians_match_analytic_value() {
    // Population MMD^2 for P = N(0,1), Q = N(10, 0.1^2), Gaussian kernel h = 1.
    let h = 1.0;
    let target = gauss_kernel_mean(0.0, 2.0, h) + gauss_kernel_mean(0.0, 0.02, h)
        - 2.0 * gauss_kernel_mean(-10.0, 1.01, h);

    // Cross-check the closed form by 2-D quadrature of E k(X, X').
    let quad_term = |m1: f64, s1: f64, m2: f64, s2: f64| {
        simpson(m1 - 9.0 * s1, m1 + 9.0 * s1, 600, |x| {
            phi((x - m1) / s1) / s1
                * simpson(m2 - 9.0 * s2, m2 + 9.0 * s2, 600, |y| {
                    phi((y - m2) / s2) / s2 * (-(x - y) * (x - y) / (2.0 * h * h)).exp()
                })
        })
    };
    let target_quad = quad_term(0.0, 1.0, 0.0, 1.0) + quad_term(10.0, 0.1, 10.0, 0.1)
        - 2.0 * quad_term(0.0, 1.0, 10.0, 0.1);
    assert!(
        (target - target_quad).abs() < 1e-6,
        "closed form {target} vs quadrature {target_quad}"
    );

    let spec = MetricSpec::new(MetricKind::Mmd2).with_bandwidth(BandwidthRule::Fixed(h));
    let root = Stream::new(23);
    let mut vals = Vec::new();
    for r in 0..10u64 {
        let mut s = root.substream(&[r]);
        let p = gaussian_batch(&mut s, 5000, 0.0, 1.0);
        let q = gaussian_batch(&mut s, 5000, 10.0, 0.1);
        vals.push(mmd2_unbiased(&p, &q, &spec).unwrap().value);
    }
    let m = mean(&vals);
    let se = boed_core::math::std_error(&vals);
    assert!(
        (m - target).abs() <= 3.0 * se.max(1e-4),
        "mean {m} vs target {target} (3 SE {})",
        3.0 * se
    );
}

#[test]
fn ed2_gaussian_shift_matches_folded_normal_oracle() {
    // Population ED^2 = 2 E|X-Y| - E|X-X'| - E|Y-Y'| with X-Y ~ N(3, 2),
    // X-X' and Y-Y' ~ N(0, 2).
    let s2 = 2.0f64;
    let target = 2.0 * folded_mean(3.0, s2.sqrt()) - 2.0 * folded_mean(0.0, s2.sqrt());

    // Quadrature cross-check of the folded-normal mean; split at the kink.
    let fm_quad = |m: f64, s: f64| {
        simpson(m - 10.0 * s, 0.0, 2000, |z| -z * phi((z - m) / s) / s)
            + simpson(0.0, m + 10.0 * s, 2000, |z| z * phi((z - m) / s) / s)
    };
    assert!((folded_mean(3.0, s2.sqrt()) - fm_quad(3.0, s2.sqrt())).abs() < 1e-8);
    assert!((folded_mean(0.0, s2.sqrt()) - fm_quad(0.0, s2.sqrt())).abs() < 1e-8);

    let root = Stream::new(29);
    let mut vals = Vec::new();
    for r in 0..10u64 {
        let mut s = root.substream(&[r]);
        let p = gaussian_batch(&mut s, 5000, 0.0, 1.0);
        let q = gaussian_batch(&mut s, 5000, 3.0, 1.0);
        vals.push(energy_distance2(&p, &q).unwrap().value);
    }
    let m = mean(&vals);
    let se = boed_core::math::std_error(&vals);
    assert!(
        (m - target).abs() <= 3.0 * se.max(1e-4),
        "mean {m} vs target {target}"
    );
}

#[test]
fn ed2_null_mean_near_zero() {
    let root = Stream::new(31);
    let mut vals = Vec::new();
    for r in 0..40u64 {
        let mut s = root.substream(&[r]);
        let p = gaussian_batch(&mut s, 500, 0.0, 1.0);
        let q = gaussian_batch(&mut s, 500, 0.0, 1.0);
        vals.push(energy_distance2(&p, &q).unwrap().value);
    }
    let m = mean(&vals);
    let se = boed_core::math::std_error(&vals);
    assert!(m.abs() <= 3.0 * se, "null mean {m} vs 3 SE {}", 3.0 * se);
}

#[test]
fn kl_kde_same_draw_near_zero() {
    let mut s = Stream::new(37).substream(&[0]);
    let p = gaussian_batch(&mut s, 5000, 0.0, 1.0);
    let spec = MetricSpec::new(MetricKind::KlKde);
    let est = kl_kde(&p, &p, &spec).unwrap().value;
    assert!(est.abs() < 0.02, "same-draw KL {est}");
}

#[test]
fn kl_kde_unit_shift_gaussians() {
    // Analytic KL(N(0,1) || N(1,1)) = 1/2.
    let mut s = Stream::new(41).substream(&[0]);
    let p = gaussian_batch(&mut s, 10_000, 0.0, 1.0);
    let q = gaussian_batch(&mut s, 10_000, 1.0, 1.0);
    let spec = MetricSpec::new(MetricKind::KlKde);
    let est = kl_kde(&p, &q, &spec).unwrap().value;
    assert!((est - 0.5).abs() < 0.1, "KL estimate {est}");
}

#[test]
fn kl_kde_is_asymmetric_on_contaminated_pair() {
    // The contamination pair of the stability experiments: Q = N(0,1),
    // P = 0.99 N(0,1) + 0.01 N(10, 0.1^2).
    let mut s = Stream::new(43).substream(&[0]);
    let n = 1000;
    let mut pv = Vec::with_capacity(n);
    for _ in 0..n {
        if s.uniform() < 0.01 {
            pv.push(10.0 + 0.1 * s.normal());
        } else {
            pv.push(s.normal());
        }
    }
    let p = batch(pv);
    let q = gaussian_batch(&mut s, n, 0.0, 1.0);
    let spec = MetricSpec::new(MetricKind::KlKde);
    let pq = kl_kde(&p, &q, &spec).unwrap().value;
    let qp = kl_kde(&q, &p, &spec).unwrap().value;
    assert!((pq - qp).abs() > 0.05, "expected asymmetry, got {pq} vs {qp}");
}

#[test]
fn median_heuristic_matches_brute_force_and_theory() {
    let mut s = Stream::new(47).substream(&[0]);
    let p = gaussian_batch(&mut s, 250, 0.0, 1.0);
    let q = gaussian_batch(&mut s, 250, 0.0, 1.0);
    // Brute force over all 500 pooled points (no subsampling at this size).
    let pooled: Vec<f64> = p.scalars().iter().chain(q.scalars()).cloned().collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push((pooled[i] - pooled[j]).abs());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let brute = 0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2]);
    let got = median_heuristic_bandwidth(&p, &q).unwrap();
    assert_eq!(got, brute);

    // At n = 10^4 pooled (subsampled to 2000) the value approaches the median
    // of |Z| with Z ~ N(0, 2): sqrt(2) * Phi^{-1}(0.75).
    let theory = std::f64::consts::SQRT_2 * norm_quantile(0.75);
    let p = gaussian_batch(&mut s, 5000, 0.0, 1.0);
    let q = gaussian_batch(&mut s, 5000, 0.0, 1.0);
    let big = median_heuristic_bandwidth(&p, &q).unwrap();
    assert!((big - theory).abs() < 0.1, "median {big} vs theory {theory}");
}

fn arb_batch(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_symmetry_and_nonnegativity(pv in arb_batch(16), qv in arb_batch(16)) {
        let p = batch(pv);
        let q = batch(qv);
        let a = w1_empirical_1d(&p, &q).unwrap().value;
        let b = w1_empirical_1d(&q, &p).unwrap().value;
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn w1_translation_and_scale(pv in arb_batch(16), qv in arb_batch(16),
                                c in -100.0f64..100.0, a in -8.0f64..8.0) {
        let p = batch(pv.clone());
        let q = batch(qv.clone());
        let base = w1_empirical_1d(&p, &q).unwrap().value;

        let ps = batch(pv.iter().map(|&x| x + c).collect());
        let qs = batch(qv.iter().map(|&x| x + c).collect());
        let shifted = w1_empirical_1d(&ps, &qs).unwrap().value;
        prop_assert!((shifted - base).abs() < 1e-10);

        let pa = batch(pv.iter().map(|&x| a * x).collect());
        let qa = batch(qv.iter().map(|&x| a * x).collect());
        let scaled = w1_empirical_1d(&pa, &qa).unwrap().value;
        prop_assert!((scaled - a.abs() * base).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn w1_triangle_inequality(pv in arb_batch(12), qv in arb_batch(12), rv in arb_batch(12)) {
        let p = batch(pv);
        let q = batch(qv);
        let r = batch(rv);
        let pq = w1_empirical_1d(&p, &q).unwrap().value;
        let qr = w1_empirical_1d(&q, &r).unwrap().value;
        let pr = w1_empirical_1d(&p, &r).unwrap().value;
        prop_assert!(pr <= pq + qr + 1e-10);
    }

    #[test]
    fn ed2_symmetry_and_translation(pv in arb_batch(10), qv in arb_batch(10),
                                    c in -100.0f64..100.0) {
        let p = batch(pv.clone());
        let q = batch(qv.clone());
        let a = energy_distance2(&p, &q).unwrap().value;
        let b = energy_distance2(&q, &p).unwrap().value;
        prop_assert_eq!(a, b);

        let ps = batch(pv.iter().map(|&x| x + c).collect());
        let qs = batch(qv.iter().map(|&x| x + c).collect());
        let shifted = energy_distance2(&ps, &qs).unwrap().value;
        prop_assert!((shifted - a).abs() < 1e-9);
    }

    #[test]
    fn mmd2_symmetry_translation_and_lower_bound(pv in arb_batch(10), qv in arb_batch(10),
                                                 c in -100.0f64..100.0) {
        let p = batch(pv.clone());
        let q = batch(qv.clone());
        let spec = MetricSpec::new(MetricKind::Mmd2);
        let (a, b) = match (mmd2_unbiased(&p, &q, &spec), mmd2_unbiased(&q, &p, &spec)) {
            (Ok(a), Ok(b)) => (a.value, b.value),
            // degenerate-bandwidth pairs are legal to reject
            _ => return Ok(()),
        };
        prop_assert!((a - b).abs() <= 1e-12);
        // bounded kernel => unbiased estimate bounded below
        prop_assert!(a >= -4.0 / 10.0 - 1e-12);

        let ps = batch(pv.iter().map(|&x| x + c).collect());
        let qs = batch(qv.iter().map(|&x| x + c).collect());
        if let Ok(shifted) = mmd2_unbiased(&ps, &qs, &spec) {
            prop_assert!((shifted.value - a).abs() < 1e-10);
        }
    }
}
