//! Log-domain Sinkhorn with squared-Euclidean cost and debiasing.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

const MAX_POINTS: usize = 4096;

fn cost_matrix(p: &SampleBatch, q: &SampleBatch) -> Vec<f64> {
    let (n, m) = (p.len(), q.len());
    let mut c = vec![0.0; n * m];
    for (i, xi) in p.rows().enumerate() {
        for (j, yj) in q.rows().enumerate() {
            c[i * m + j] = xi.iter().zip(yj).map(|(&a, &b)| (a - b) * (a - b)).sum();
        }
    }
    c
}

// Entropic OT_eps between uniform empirical measures; returns <pi, C>.
fn ot_eps(c: &[f64], n: usize, m: usize, eps: f64, max_iters: usize, tol: f64) -> Result<f64> {
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut violation = f64::INFINITY;
    let mut scratch = vec![0.0; n.max(m)];

    // stable -eps * LSE over one axis
    let lse = |vals: &mut [f64]| -> f64 {
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return f64::NEG_INFINITY;
        }
        let s: f64 = vals.iter().map(|&v| (v - mx).exp()).sum();
        mx + s.ln()
    };

    for _ in 0..max_iters {
        // f-update: row marginals become exact.
        for i in 0..n {
            for j in 0..m {
                scratch[j] = (g[j] - c[i * m + j]) / eps + log_b;
            }
            f[i] = -eps * lse(&mut scratch[..m]);
        }
        // g-update: column marginals become exact.
        for j in 0..m {
            for i in 0..n {
                scratch[i] = (f[i] - c[i * m + j]) / eps + log_a;
            }
            g[j] = -eps * lse(&mut scratch[..n]);
        }
        // Row-marginal violation after the g-update.
        let mut v = 0.0f64;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..m {
                row += ((f[i] + g[j] - c[i * m + j]) / eps + log_a + log_b).exp();
            }
            v = v.max((row - log_a.exp()).abs());
        }
        violation = v;
        if violation < tol {
            let mut cost = 0.0;
            for i in 0..n {
                for j in 0..m {
                    cost += ((f[i] + g[j] - c[i * m + j]) / eps + log_a + log_b).exp()
                        * c[i * m + j];
                }
            }
            return Ok(cost);
        }
    }
    Err(Error::SinkhornNonConvergence { max_iters, violation })
}

// Self-transport OT_eps(P, P): the problem is symmetric, so both potentials
// are equal at the fixed point and the averaged update f <- (f + T f)/2
// converges much faster than alternating updates.
fn ot_eps_self(c: &[f64], n: usize, eps: f64, max_iters: usize, tol: f64) -> Result<f64> {
    let log_a = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut fnew = vec![0.0; n];
    let mut violation = f64::INFINITY;
    let mut scratch = vec![0.0; n];
    let lse = |vals: &[f64]| -> f64 {
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return f64::NEG_INFINITY;
        }
        let s: f64 = vals.iter().map(|&v| (v - mx).exp()).sum();
        mx + s.ln()
    };
    for _ in 0..max_iters {
        for i in 0..n {
            for j in 0..n {
                scratch[j] = (f[j] - c[i * n + j]) / eps + log_a;
            }
            fnew[i] = 0.5 * (f[i] - eps * lse(&scratch));
        }
        f.copy_from_slice(&fnew);
        let mut v = 0.0f64;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += ((f[i] + f[j] - c[i * n + j]) / eps + 2.0 * log_a).exp();
            }
            v = v.max((row - log_a.exp()).abs());
        }
        violation = v;
        if violation < tol {
            let mut cost = 0.0;
            for i in 0..n {
                for j in 0..n {
                    cost += ((f[i] + f[j] - c[i * n + j]) / eps + 2.0 * log_a).exp()
                        * c[i * n + j];
                }
            }
            return Ok(cost);
        }
    }
    Err(Error::SinkhornNonConvergence { max_iters, violation })
}

/// Debiased entropic W2^2 estimate
/// S_eps(P, Q) = OT_eps(P,Q) - (OT_eps(P,P) + OT_eps(Q,Q)) / 2
/// with transport cost <pi, C> and uniform marginals.
pub fn sinkhorn_w2(
    p: &SampleBatch,
    q: &SampleBatch,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch { n_p: p.len(), n_q: q.len() });
    }
    if p.len() > MAX_POINTS {
        return Err(Error::Config(format!(
            "sinkhorn batch size {} exceeds {MAX_POINTS}",
            p.len()
        )));
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("sinkhorn epsilon must be positive".into()));
    }
    let (n, m) = (p.len(), q.len());
    let c_pq = cost_matrix(p, q);
    let c_pp = cost_matrix(p, p);
    let c_qq = cost_matrix(q, q);
    let main = ot_eps(&c_pq, n, m, epsilon, max_iters, tol)?;
    let self_p = ot_eps_self(&c_pp, n, epsilon, max_iters, tol)?;
    let self_q = ot_eps_self(&c_qq, m, epsilon, max_iters, tol)?;
    Ok(main - 0.5 * (self_p + self_q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::SpaceTag;
    use crate::rng::Stream;

    fn normal_batch(seed: u64, n: usize, d: usize, shift: f64) -> SampleBatch {
        let mut s = Stream::new(seed);
        let mut data = vec![0.0; n * d];
        s.fill_normal(&mut data);
        for v in data.iter_mut() {
            *v += shift;
        }
        SampleBatch::new(data, n, d, seed, SpaceTag::Parameter)
    }

    #[test]
    fn self_comparison_is_zero() {
        let p = normal_batch(1, 64, 3, 0.0);
        let v = sinkhorn_w2(&p, &p, 0.1, 2000, 1e-6).unwrap();
        assert!(v.abs() < 1e-6, "self value {v}");
    }

    #[test]
    fn translation_pair_d4() {
        let p = normal_batch(2, 512, 4, 0.0);
        let q = p.clone();
        let q = SampleBatch::new(
            q.as_slice().iter().map(|&v| v + 1.0).collect(),
            512,
            4,
            2,
            SpaceTag::Parameter,
        );
        let v = sinkhorn_w2(&p, &q, 0.05, 5000, 5e-6).unwrap();
        assert!((v - 4.0).abs() < 0.1, "translation estimate {v}");
    }

    #[test]
    fn symmetry() {
        let p = normal_batch(3, 64, 2, 0.0);
        let q = normal_batch(4, 64, 2, 0.5);
        let a = sinkhorn_w2(&p, &q, 0.5, 5000, 1e-9).unwrap();
        let b = sinkhorn_w2(&q, &p, 0.5, 5000, 1e-9).unwrap();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn input_validation() {
        let p = normal_batch(5, 8, 2, 0.0);
        let q = normal_batch(6, 9, 2, 0.0);
        assert!(matches!(
            sinkhorn_w2(&p, &q, 0.1, 10, 1e-6),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(sinkhorn_w2(&p, &p, 0.0, 10, 1e-6).is_err());
    }

    #[test]
    fn nonconvergence_reports_violation() {
        let p = normal_batch(7, 32, 2, 0.0);
        let q = normal_batch(8, 32, 2, 5.0);
        match sinkhorn_w2(&p, &q, 0.01, 1, 1e-12) {
            Err(Error::SinkhornNonConvergence { violation, .. }) => {
                assert!(violation.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
