//! Density power divergence loss for Poisson observations.
//!
//! For `α > 0` the per-observation loss is
//!
//! ```text
//! l(λ, x) = Σ_y p(y; λ)^{1+α} − (1 + 1/α) · p(x; λ)^α
//! ```
//!
//! and for `α = 0` it is the negative Poisson log-likelihood
//! `λ − x·log λ + log x!`. The infinite sum is truncated at
//! `max(⌈λ + 12√λ + 30⌉, first run of 5 terms below TOL·partial sum)`.
//!
//! Hot loops go through [`DpKernel`], which caches `y^{±(1+α)}` for a fixed
//! α so each series term costs two multiplications. The series is anchored in
//! log space at the mode and extended by the ratio `p(y)/p(y−1) = λ/y`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingarch::{self, CountSeries, ModelSpec, ParamVector};

/// Relative truncation tolerance for the power-sum series.
pub const TOL: f64 = 1e-12;

const LOG_FACT_TABLE: usize = 4096;
const POW_TABLE: usize = 1024;

fn log_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LOG_FACT_TABLE);
        t.push(0.0);
        let mut acc = 0.0;
        for k in 1..LOG_FACT_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `log(x!)`; table lookup below 4096, Stirling series above.
pub fn log_factorial(x: u64) -> f64 {
    if (x as usize) < LOG_FACT_TABLE {
        return log_fact_table()[x as usize];
    }
    let n = x as f64;
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// `log p(x; λ)` for the Poisson pmf.
#[inline]
pub fn log_pmf(lambda: f64, x: u64) -> f64 {
    -lambda + x as f64 * lambda.ln() - log_factorial(x)
}

/// Divergence order α ≥ 0. `α = 0` is the likelihood case.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DpOrder(f64);

impl DpOrder {
    pub const LIKELIHOOD: DpOrder = DpOrder(0.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Config(format!("divergence order α must be finite and ≥ 0, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_likelihood(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for DpOrder {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        DpOrder::new(v)
    }
}

impl From<DpOrder> for f64 {
    fn from(a: DpOrder) -> f64 {
        a.0
    }
}

/// `Σ_y p^{1+α}` and `Σ_y y·p^{1+α}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSums {
    pub s: f64,
    pub sy: f64,
}

/// Precomputed evaluation state for one divergence order.
#[derive(Clone, Debug)]
pub struct DpKernel {
    alpha: f64,
    tol: f64,
    /// `y^{1+α}` for `y < POW_TABLE`.
    pow: Vec<f64>,
    /// `y^{-(1+α)}` for `y < POW_TABLE`.
    inv_pow: Vec<f64>,
}

impl DpKernel {
    pub fn new(alpha: DpOrder) -> Self {
        Self::with_tol(alpha, TOL)
    }

    #[doc(hidden)]
    pub fn with_tol(alpha: DpOrder, tol: f64) -> Self {
        let a = alpha.value();
        let (pow, inv_pow) = if a > 0.0 {
            let e = 1.0 + a;
            let pow: Vec<f64> = (0..POW_TABLE).map(|y| (y as f64).powf(e)).collect();
            let inv_pow = pow.iter().map(|p| if *p > 0.0 { 1.0 / p } else { 0.0 }).collect();
            (pow, inv_pow)
        } else {
            (Vec::new(), Vec::new())
        };
        Self { alpha: a, tol, pow, inv_pow }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    fn ypow(&self, y: u64) -> (f64, f64) {
        if (y as usize) < POW_TABLE {
            (self.pow[y as usize], self.inv_pow[y as usize])
        } else {
            let p = (y as f64).powf(1.0 + self.alpha);
            (p, 1.0 / p)
        }
    }

    /// Power sums for `λ`. With `α = 0` this is `(1, λ)` exactly.
    pub fn power_sums(&self, lambda: f64) -> PowerSums {
        if self.alpha == 0.0 {
            return PowerSums { s: 1.0, sy: lambda };
        }
        self.power_sums_with_extra(lambda, 0)
    }

    #[doc(hidden)]
    pub fn power_sums_with_extra(&self, lambda: f64, extra_terms: u64) -> PowerSums {
        let e = 1.0 + self.alpha;
        let mode = lambda.floor() as u64;
        let lam_pow = lambda.powf(e);
        let anchor = (e * log_pmf(lambda, mode)).exp();
        let cap = (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as u64 + extra_terms;

        let mut s = anchor;
        let mut sy = mode as f64 * anchor;

        // upper tail
        let mut q = anchor;
        let mut y = mode;
        let mut small_run = 0;
        loop {
            y += 1;
            let (_, inv) = self.ypow(y);
            q *= lam_pow * inv;
            s += q;
            sy += y as f64 * q;
            if q < self.tol * s {
                small_run += 1;
            } else {
                small_run = 0;
            }
            if y >= cap && small_run >= 5 {
                break;
            }
            if q == 0.0 && y >= cap {
                break;
            }
        }

        // lower tail down to y = 0
        let mut q = anchor;
        let mut y = mode;
        let mut small_run = 0;
        while y > 0 {
            let (p, _) = self.ypow(y);
            q *= p / lam_pow;
            y -= 1;
            s += q;
            sy += y as f64 * q;
            if q < self.tol * 1e-3 * s {
                small_run += 1;
                if small_run >= 5 || q == 0.0 {
                    break;
                }
            } else {
                small_run = 0;
            }
        }
        PowerSums { s, sy }
    }

    /// Per-observation loss `l(λ, x)`.
    pub fn loss(&self, lambda: f64, x: u64) -> f64 {
        if self.alpha == 0.0 {
            return lambda - x as f64 * lambda.ln() + log_factorial(x);
        }
        let ps = self.power_sums(lambda);
        ps.s - (1.0 + 1.0 / self.alpha) * (self.alpha * log_pmf(lambda, x)).exp()
    }

    /// `∂l/∂λ`.
    pub fn dloss(&self, lambda: f64, x: u64) -> f64 {
        self.loss_and_dloss(lambda, x).1
    }

    /// Loss and its λ-derivative, sharing one series evaluation.
    #[inline]
    pub fn loss_and_dloss(&self, lambda: f64, x: u64) -> (f64, f64) {
        let xf = x as f64;
        if self.alpha == 0.0 {
            return (lambda - xf * lambda.ln() + log_factorial(x), 1.0 - xf / lambda);
        }
        let a = self.alpha;
        let ps = self.power_sums(lambda);
        let pmf_a = (a * log_pmf(lambda, x)).exp();
        let loss = ps.s - (1.0 + 1.0 / a) * pmf_a;
        let d = (1.0 + a) * (ps.sy / lambda - ps.s) - (1.0 + a) * pmf_a * (xf / lambda - 1.0);
        (loss, d)
    }
}

/// `S(λ, α) = Σ_y p(y; λ)^{1+α}`, in `(0, 1]`.
pub fn poisson_power_sum(lambda: f64, alpha: DpOrder) -> f64 {
    DpKernel::new(alpha).power_sums(lambda).s
}

#[doc(hidden)]
pub fn poisson_power_sum_with_tol(lambda: f64, alpha: DpOrder, tol: f64) -> f64 {
    DpKernel::with_tol(alpha, tol).power_sums(lambda).s
}

pub fn dp_loss_term(lambda: f64, x: u64, alpha: DpOrder) -> f64 {
    DpKernel::new(alpha).loss(lambda, x)
}

pub fn dp_loss_dlambda(lambda: f64, x: u64, alpha: DpOrder) -> f64 {
    DpKernel::new(alpha).dloss(lambda, x)
}

/// Per-observation gradients `∂l̃_t/∂θ`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSequence {
    terms: Vec<f64>,
    dim: usize,
}

impl ScoreSequence {
    /// Builds a sequence from explicit rows (all of equal length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("score rows must be nonempty and of equal length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite score term".into()));
        }
        Ok(Self { terms: rows.concat(), dim })
    }

    pub(crate) fn from_flat(terms: Vec<f64>, dim: usize) -> Self {
        Self { terms, dim }
    }

    pub fn len(&self) -> usize {
        self.terms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn term(&self, t: usize) -> &[f64] {
        &self.terms[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.terms.chunks_exact(self.dim)
    }

    /// `Σ_t terms[t]`, i.e. the gradient of the objective.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Objective and score evaluation over one series at a fixed α.
///
/// θ is not validated here; the optimizer only ever hands in feasible points.
#[derive(Clone, Debug)]
pub(crate) struct Evaluator<'a> {
    pub model: &'a ModelSpec,
    pub x: &'a [u64],
    pub kernel: DpKernel,
    pub lambda1: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a ModelSpec, series: &'a CountSeries, alpha: DpOrder, lambda1: f64) -> Self {
        Self { model, x: series.as_slice(), kernel: DpKernel::new(alpha), lambda1 }
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let mut lambda = Vec::new();
        ingarch::filter_into(self.model, theta, self.x, self.lambda1, &mut lambda, None)?;
        let v: f64 = lambda.iter().zip(self.x).map(|(&l, &x)| self.kernel.loss(l, x)).sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical("objective is not finite".into()))
        }
    }

    /// Objective value and per-observation score rows.
    pub fn value_and_scores(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = theta.len();
        let mut lambda = Vec::new();
        let mut grad = Vec::new();
        ingarch::filter_into(self.model, theta, self.x, self.lambda1, &mut lambda, Some(&mut grad))?;
        let mut value = 0.0;
        for (t, (&l, &x)) in lambda.iter().zip(self.x).enumerate() {
            let (loss, dl) = self.kernel.loss_and_dloss(l, x);
            value += loss;
            for g in &mut grad[t * d..(t + 1) * d] {
                *g *= dl;
            }
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("objective or score is not finite".into()));
        }
        Ok((value, grad))
    }

    /// Objective value and its gradient.
    pub fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = theta.len();
        let (v, scores) = self.value_and_scores(theta)?;
        let mut g = vec![0.0; d];
        for row in scores.chunks_exact(d) {
            for (o, s) in g.iter_mut().zip(row) {
                *o += s;
            }
        }
        Ok((v, g))
    }
}

fn checked(model: &ModelSpec, theta: &ParamVector) -> Result<()> {
    ingarch::validate_params(model, theta)?.into_result()
}

/// `H̃_n(θ) = Σ_t l̃_t(θ)`.
pub fn objective(model: &ModelSpec, theta: &ParamVector, series: &CountSeries, alpha: DpOrder, lambda1: f64) -> Result<f64> {
    checked(model, theta)?;
    let path = ingarch::intensity_filter(model, theta, series, lambda1)?;
    let kernel = DpKernel::new(alpha);
    Ok(path.lambda.iter().zip(series.as_slice()).map(|(&l, &x)| kernel.loss(l, x)).sum())
}

/// `∂l̃_t/∂θ = ∂l/∂λ(λ̃_t, X_t) · ∂λ̃_t/∂θ` for every t.
pub fn score_sequence(
    model: &ModelSpec,
    theta: &ParamVector,
    series: &CountSeries,
    alpha: DpOrder,
    lambda1: f64,
) -> Result<ScoreSequence> {
    checked(model, theta)?;
    let lambda1 = ingarch::InitialIntensity::Fixed(lambda1).resolve(series)?;
    let eval = Evaluator::new(model, series, alpha, lambda1);
    let (_, scores) = eval.value_and_scores(theta.as_slice())?;
    Ok(ScoreSequence::from_flat(scores, theta.dim()))
}
