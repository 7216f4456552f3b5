//! Small numerical helpers used throughout the crate.

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// log N(z; 0, sigma^2)
pub fn norm_logpdf(z: f64, sigma: f64) -> f64 {
    let t = z / sigma;
    -0.5 * (LN_2PI + t * t) - sigma.ln()
}

pub fn norm_pdf(z: f64, sigma: f64) -> f64 {
    norm_logpdf(z, sigma).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// log of the standard normal CDF, stable deep in the lower tail.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > -10.0 {
        norm_cdf(z).ln()
    } else {
        // Asymptotic expansion of Mills' ratio: Phi(z) ~ phi(z)/(-z) * (1 - 1/z^2 + 3/z^4)
        let z2 = z * z;
        -0.5 * (z2 + LN_2PI) - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Stable log(mean(exp(v))).
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + (s / v.len() as f64).ln()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard error of the mean.
pub fn std_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut w = v.to_vec();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = w.len();
    if n % 2 == 1 {
        w[n / 2]
    } else {
        0.5 * (w[n / 2 - 1] + w[n / 2])
    }
}

/// Complementary error function via the regularized incomplete gamma function:
/// erfc(x) = Q(1/2, x^2) for x >= 0. Near machine precision.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x == 0.0 {
        return 1.0;
    }
    let x2 = x * x;
    if x2 < 1.5 {
        1.0 - gamma_p_series(0.5, x2)
    } else {
        gamma_q_cf(0.5, x2)
    }
}

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1; // ln(Gamma(1/2))

// Lower regularized incomplete gamma P(a, x) by power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - LN_SQRT_PI).exp()
}

// Upper regularized incomplete gamma Q(a, x) by modified Lentz continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - LN_SQRT_PI).exp() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfc_reference_values() {
        // Values from standard tables.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_13),
            (2.0, 0.004_677_734_981_063_127),
            (3.0, 2.209_049_699_858_544e-5),
            (-1.0, 1.842_700_792_949_714_9),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "erfc({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn norm_cdf_symmetry() {
        for &z in &[0.0, 0.3, 1.7, 4.0] {
            assert!((norm_cdf(z) + norm_cdf(-z) - 1.0).abs() < 1e-14);
        }
        assert!((norm_cdf(1.96) - 0.975_002_104_851_78).abs() < 1e-10);
    }

    #[test]
    fn log_norm_cdf_matches_direct_and_tail() {
        for &z in &[-9.0, -5.0, -1.0, 0.0, 2.0] {
            assert!((log_norm_cdf(z) - norm_cdf(z).ln()).abs() < 1e-9, "z={z}");
        }
        // deep tail stays finite and close to -z^2/2
        let lp = log_norm_cdf(-40.0);
        assert!(lp.is_finite());
        assert!((lp - (-0.5 * 1600.0 - (40.0f64 * (2.0 * std::f64::consts::PI).sqrt()).ln())).abs() < 0.01);
    }

    #[test]
    fn log_mean_exp_shift() {
        let v = [1000.0, 1001.0, 999.0];
        let got = log_mean_exp(&v);
        let want = 1000.0 + ((1.0f64.exp() + 1.0 + (-1.0f64).exp()) / 3.0).ln();
        assert!((got - want).abs() < 1e-10);
    }
}
