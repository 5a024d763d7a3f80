//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerical code.

#![allow(dead_code)]

/// `ln k!` by direct summation.
pub fn ln_fact(k: u64) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// INGARCH(1,1) intensities, gradients and second derivatives, with a fixed
/// (θ-free) starting intensity.
pub struct Recursion {
    pub lambda: Vec<f64>,
    pub grad: Vec<[f64; 3]>,
    pub hess: Vec<[[f64; 3]; 3]>,
}

pub fn recursion(theta: [f64; 3], x: &[u64], lambda1: f64) -> Recursion {
    let [w, a, b] = theta;
    let n = x.len();
    let mut lambda = vec![lambda1; n];
    let mut grad = vec![[0.0; 3]; n];
    let mut hess = vec![[[0.0; 3]; 3]; n];
    for t in 1..n {
        lambda[t] = w + a * lambda[t - 1] + b * x[t - 1] as f64;
        let gp = grad[t - 1];
        let base = [1.0, lambda[t - 1], x[t - 1] as f64];
        for i in 0..3 {
            grad[t][i] = base[i] + a * gp[i];
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut v = a * hess[t - 1][i][j];
                if i == 1 {
                    v += gp[j];
                }
                if j == 1 {
                    v += gp[i];
                }
                hess[t][i][j] = v;
            }
        }
    }
    Recursion { lambda, grad, hess }
}

/// Negative Poisson log-likelihood `Σ λ_t − x_t ln λ_t + ln x_t!`.
pub fn neg_loglik(theta: [f64; 3], x: &[u64], lambda1: f64) -> f64 {
    let r = recursion(theta, x, lambda1);
    r.lambda.iter().zip(x).map(|(&l, &xi)| l - xi as f64 * l.ln() + ln_fact(xi)).sum()
}

/// Per-observation likelihood scores `(1 − x_t/λ_t)∂λ_t`.
pub fn likelihood_scores(theta: [f64; 3], x: &[u64], lambda1: f64) -> Vec<[f64; 3]> {
    let r = recursion(theta, x, lambda1);
    (0..x.len())
        .map(|t| {
            let c = 1.0 - x[t] as f64 / r.lambda[t];
            [c * r.grad[t][0], c * r.grad[t][1], c * r.grad[t][2]]
        })
        .collect()
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    // Gaussian elimination with partial pivoting
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = v[i];
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        for r in 0..3 {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

/// Unconstrained maximum likelihood by damped Newton with the exact Hessian.
/// Returns `None` if it leaves the stationary region or fails to converge.
pub fn newton_mle(x: &[u64], lambda1: f64, start: [f64; 3]) -> Option<[f64; 3]> {
    let mut th = start;
    let mut f = neg_loglik(th, x, lambda1);
    for _ in 0..200 {
        let r = recursion(th, x, lambda1);
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for t in 0..x.len() {
            let l = r.lambda[t];
            let xi = x[t] as f64;
            let c = 1.0 - xi / l;
            for i in 0..3 {
                g[i] += c * r.grad[t][i];
                for j in 0..3 {
                    h[i][j] += xi / (l * l) * r.grad[t][i] * r.grad[t][j] + c * r.hess[t][i][j];
                }
            }
        }
        if g.iter().all(|v| v.abs() < 1e-10 * x.len() as f64) {
            return Some(th);
        }
        let step = solve3(h, [-g[0], -g[1], -g[2]])?;
        let mut t = 1.0;
        loop {
            let cand = [th[0] + t * step[0], th[1] + t * step[1], th[2] + t * step[2]];
            let ok = cand[0] > 0.0 && cand[1] >= 0.0 && cand[2] >= 0.0 && cand[1] + cand[2] < 1.0;
            if ok {
                let fc = neg_loglik(cand, x, lambda1);
                if fc.is_finite() && fc <= f + 1e-12 * f.abs() {
                    th = cand;
                    f = fc;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Likelihood score test: `max_k n⁻¹ S_kᵀ K⁻¹ S_k` with `K = n⁻¹ Σ s sᵀ`.
pub fn score_test(theta: [f64; 3], x: &[u64], lambda1: f64) -> f64 {
    let s = likelihood_scores(theta, x, lambda1);
    let n = x.len() as f64;
    let mut k = [[0.0; 3]; 3];
    for row in &s {
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] += row[i] * row[j] / n;
            }
        }
    }
    let mut cum = [0.0; 3];
    let mut best = 0.0f64;
    for row in &s {
        for i in 0..3 {
            cum[i] += row[i];
        }
        let z = solve3(k, cum).expect("invertible K");
        let q = (cum[0] * z[0] + cum[1] * z[1] + cum[2] * z[2]) / n;
        best = best.max(q);
    }
    best
}

/// `Σ_y p_y^{1+α}` and `Σ_y y p_y^{1+α}` by a plain sum far into the tail.
pub fn power_sums(lambda: f64, alpha: f64) -> (f64, f64) {
    let upto = (lambda + 40.0 * lambda.sqrt() + 200.0) as u64;
    let mut s = 0.0;
    let mut sy = 0.0;
    let mut lf = 0.0;
    for y in 0..=upto {
        if y > 0 {
            lf += (y as f64).ln();
        }
        let q = ((1.0 + alpha) * (y as f64 * lambda.ln() - lambda - lf)).exp();
        s += q;
        sy += y as f64 * q;
    }
    (s, sy)
}

fn pmf(lambda: f64, x: u64) -> f64 {
    (x as f64 * lambda.ln() - lambda - ln_fact(x)).exp()
}

/// Divergence loss for one observation (α > 0).
pub fn dp_loss(lambda: f64, x: u64, alpha: f64) -> f64 {
    let (s, _) = power_sums(lambda, alpha);
    s - (1.0 + 1.0 / alpha) * pmf(lambda, x).powf(alpha)
}

/// `∂/∂λ` of [`dp_loss`] (α > 0).
pub fn dp_dloss(lambda: f64, x: u64, alpha: f64) -> f64 {
    let (s, sy) = power_sums(lambda, alpha);
    let p = pmf(lambda, x).powf(alpha);
    (1.0 + alpha) * (sy / lambda - s) - (1.0 + alpha) * p * (x as f64 / lambda - 1.0)
}

/// Per-observation divergence scores (α > 0).
pub fn dp_scores(theta: [f64; 3], x: &[u64], lambda1: f64, alpha: f64) -> Vec<[f64; 3]> {
    let r = recursion(theta, x, lambda1);
    (0..x.len())
        .map(|t| {
            let c = dp_dloss(r.lambda[t], x[t], alpha);
            [c * r.grad[t][0], c * r.grad[t][1], c * r.grad[t][2]]
        })
        .collect()
}

pub fn mean(x: &[u64]) -> f64 {
    x.iter().sum::<u64>() as f64 / x.len() as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `P(sup|B°| > x) = 2 Σ_{k≥1} (−1)^{k+1} e^{−2k²x²}`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        s += if k as i64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * k * k * x * x).exp();
    }
    2.0 * s
}

/// Upper `level` quantile of `sup|B°|²` by bisection on the Kolmogorov series.
pub fn kolmogorov_sq_quantile(level: f64) -> f64 {
    let (mut lo, mut hi) = (0.3, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_tail(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).powi(2)
}
