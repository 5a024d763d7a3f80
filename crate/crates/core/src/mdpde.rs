//! Minimum density power divergence estimation.
//!
//! [`fit`] minimizes `H̃_n(θ) = Σ_t l̃_t(θ)` over the parameter set Θ with a
//! projected quasi-Newton method driven by the analytic score, restarting
//! from jittered copies of a moment-based initial guess. The fitted result
//! carries the score outer-product matrix `K̂`, the curvature matrix `Ĵ` and
//! the sandwich covariance `Ĵ⁻¹K̂Ĵ⁻¹/n`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{DpOrder, Evaluator, ScoreSequence};
use crate::error::{Error, Result};
use crate::ingarch::{self, CountSeries, InitialIntensity, ModelSpec, ParamVector, DELTA_L, DELTA_S};
use crate::optim::{self, MinimizeOptions, Region};

/// Per-coordinate closed intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    /// Default linear-model box: `w ∈ [δ_L, max(5·x̄, 1)]`, `a, b ∈ [0, 1 − δ_S]`.
    pub fn linear_default(series: &CountSeries) -> Self {
        let w_max = (5.0 * series.mean()).max(1.0);
        Self { lower: vec![DELTA_L, 0.0, 0.0], upper: vec![w_max, 1.0 - DELTA_S, 1.0 - DELTA_S] }
    }

    fn validate(&self, model: &ModelSpec) -> Result<()> {
        let d = model.dim();
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::Dimension { expected: d, got: self.lower.len().min(self.upper.len()) });
        }
        if self.lower.iter().zip(&self.upper).any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::Config("parameter box bounds must be finite with lower ≤ upper".into()));
        }
        if model.is_linear() {
            let ok = self.lower[0] >= DELTA_L && self.lower[1] >= 0.0 && self.lower[2] >= 0.0 && self.lower[1] + self.lower[2] <= 1.0 - DELTA_S;
            if !ok {
                return Err(Error::Config("parameter box must lie inside w ≥ δ_L, a, b ≥ 0, a + b ≤ 1 − δ_S".into()));
            }
        }
        Ok(())
    }

    fn region(&self, model: &ModelSpec) -> Region {
        let sum_cap = model.is_linear().then(|| (vec![1, 2], 1.0 - DELTA_S));
        Region { lower: self.lower.clone(), upper: self.upper.clone(), sum_cap }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Tolerance on the projected-gradient sup-norm of `H̃_n / n`.
    pub gradient_tolerance: f64,
    /// `None` derives the linear default box from the data.
    pub parameter_box: Option<ParamBox>,
    /// Extra jittered starts beyond the initial guess.
    pub restarts: usize,
    pub lambda1: InitialIntensity,
    /// Overrides the moment initializer (required for custom links).
    pub initial: Option<ParamVector>,
    pub jitter_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-7,
            parameter_box: None,
            restarts: 2,
            lambda1: InitialIntensity::SampleMean,
            initial: None,
            jitter_seed: 0x6d64_7064_655f_6a74,
        }
    }
}

/// Output of [`fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub alpha: DpOrder,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub on_boundary: Vec<bool>,
    /// Gradient of `H̃_n` at `θ̂`.
    pub gradient: Vec<f64>,
    pub k_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    /// `None` when `Ĵ` is singular.
    pub sandwich_covariance: Option<DMatrix<f64>>,
    pub lambda1: f64,
    pub n: usize,
    pub parameter_box: ParamBox,
    /// Scores at `θ̂`, reused by the change test.
    pub scores: ScoreSequence,
}

impl FitResult {
    pub fn any_on_boundary(&self) -> bool {
        self.on_boundary.iter().any(|&b| b)
    }

    /// Standard errors from the sandwich diagonal.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.sandwich_covariance.as_ref().map(|c| c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            theta_hat: self.theta_hat.as_slice().to_vec(),
            alpha: self.alpha.value(),
            objective: self.objective_value,
            converged: self.converged,
            iterations: self.iterations,
            on_boundary: self.on_boundary.clone(),
            lambda1: self.lambda1,
            n: self.n,
            k_hat: rows(&self.k_hat),
            j_hat: rows(&self.j_hat),
            covariance: self.sandwich_covariance.as_ref().map(rows),
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// JSON form of a fit; matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: Vec<f64>,
    pub alpha: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub on_boundary: Vec<bool>,
    pub lambda1: f64,
    pub n: usize,
    pub k_hat: Vec<Vec<f64>>,
    pub j_hat: Vec<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
}

fn autocorrelation(x: &[f64], mean: f64, lag: usize) -> f64 {
    let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = x.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum();
    num / denom
}

/// Lag-one autocorrelation of the linear model with persistence `φ = a + b`
/// and observation coefficient `b`.
fn model_rho1(phi: f64, b: f64) -> f64 {
    let a = phi - b;
    b * (1.0 - a * phi) / (1.0 - phi * phi + b * b)
}

/// Moment-based starting value for the linear model.
///
/// Persistence `a + b` is read off the geometric ACF decay `ρ(2)/ρ(1)`, `b`
/// is matched to `ρ(1)` by bisection, and `w` to the mean. Degenerate
/// autocorrelations fall back to `(0.7·x̄, 0.1, 0.2)`.
pub fn mom_initialize(series: &CountSeries) -> Result<ParamVector> {
    mom_initialize_in(series, &ParamBox::linear_default(series))
}

fn mom_initialize_in(series: &CountSeries, bx: &ParamBox) -> Result<ParamVector> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Data(format!("moment initialization needs at least 10 observations, got {n}")));
    }
    let x: Vec<f64> = series.as_slice().iter().map(|&v| v as f64).collect();
    let mean = series.mean();
    if mean <= 0.0 {
        return Err(Error::Data("moment initialization needs a positive sample mean".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Data("series is constant; moments are degenerate".into()));
    }
    let region = bx.region(&ModelSpec::Linear);
    let mut theta = moment_guess(&x, mean).unwrap_or_else(|| vec![0.7 * mean, 0.1, 0.2]);
    region.project(&mut theta);
    Ok(ParamVector::new(theta))
}

fn moment_guess(x: &[f64], mean: f64) -> Option<Vec<f64>> {
    let r1 = autocorrelation(x, mean, 1);
    let r2 = autocorrelation(x, mean, 2);
    if !(r1.is_finite() && r2.is_finite()) || r1 <= 0.0 {
        return None;
    }
    let phi = (r2 / r1).clamp(0.05, 1.0 - 2.0 * DELTA_S);
    // model_rho1(φ, ·) rises from 0 at b = 0 to φ at b = φ
    let target = r1.min(phi * (1.0 - 1e-9));
    let (mut lo, mut hi) = (0.0, phi);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if model_rho1(phi, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let guess = vec![mean * (1.0 - phi), phi - b, b];
    guess.iter().all(|v| v.is_finite()).then_some(guess)
}

/// `K̂ = (1+α)⁻² n⁻¹ Σ_t s_t s_tᵀ`.
pub fn k_hat_from_scores(scores: &ScoreSequence, alpha: DpOrder) -> DMatrix<f64> {
    let d = scores.dim();
    let n = scores.len() as f64;
    let mut k = DMatrix::<f64>::zeros(d, d);
    for row in scores.iter() {
        for i in 0..d {
            for j in 0..=i {
                k[(i, j)] += row[i] * row[j];
            }
        }
    }
    let scale = 1.0 / ((1.0 + alpha.value()).powi(2) * n);
    for i in 0..d {
        for j in 0..=i {
            let v = k[(i, j)] * scale;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K̂` at `θ`.
pub fn k_hat(model: &ModelSpec, theta: &ParamVector, series: &CountSeries, alpha: DpOrder, lambda1: f64) -> Result<DMatrix<f64>> {
    let scores = crate::divergence::score_sequence(model, theta, series, alpha, lambda1)?;
    Ok(k_hat_from_scores(&scores, alpha))
}

/// `Ĵ = (1+α)⁻¹ n⁻¹ ∇²H̃_n(θ)`, with the Hessian taken by central differences
/// of the analytic score and symmetrized. Coordinates whose shifted point is
/// not evaluable fall back to a one-sided difference.
pub fn j_hat(model: &ModelSpec, theta: &ParamVector, series: &CountSeries, alpha: DpOrder, lambda1: f64) -> Result<DMatrix<f64>> {
    ingarch::validate_params(model, theta)?.into_result()?;
    let lambda1 = InitialIntensity::Fixed(lambda1).resolve(series)?;
    let eval = Evaluator::new(model, series, alpha, lambda1);
    curvature(&eval, theta.as_slice(), alpha, series.len())
}

fn curvature(eval: &Evaluator<'_>, theta: &[f64], alpha: DpOrder, n: usize) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let grad_at = |shift: usize, h: f64| -> Option<Vec<f64>> {
        let mut p = theta.to_vec();
        p[shift] += h;
        eval.value_and_grad(&p).ok().map(|(_, g)| g)
    };
    let mut h = DMatrix::<f64>::zeros(d, d);
    let base = eval.value_and_grad(theta)?.1;
    for j in 0..d {
        let step = 1e-5 * theta[j].abs().max(1.0);
        let col: Vec<f64> = match (grad_at(j, step), grad_at(j, -step)) {
            (Some(gp), Some(gm)) => gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect(),
            (Some(gp), None) => gp.iter().zip(&base).map(|(a, b)| (a - b) / step).collect(),
            (None, Some(gm)) => base.iter().zip(&gm).map(|(a, b)| (a - b) / step).collect(),
            (None, None) => return Err(Error::Numerical(format!("score not evaluable around θ[{j}]"))),
        };
        for i in 0..d {
            h[(i, j)] = col[i];
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Hessian entry".into()));
    }
    let scale = 1.0 / ((1.0 + alpha.value()) * n as f64);
    Ok((&h + h.transpose()) * (0.5 * scale))
}

/// `Ĵ⁻¹K̂Ĵ⁻¹/n`, symmetrized; tiny negative eigenvalues are clipped.
pub fn sandwich(k: &DMatrix<f64>, j: &DMatrix<f64>, n: usize) -> Result<Option<DMatrix<f64>>> {
    let Some(jinv) = j.clone().try_inverse() else { return Ok(None) };
    let raw = &jinv * k * &jinv / n as f64;
    let sym = (&raw + raw.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let eig = sym.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min < -1e-10 * top.max(1.0) {
        return Err(Error::Numerical(format!("sandwich covariance has negative eigenvalue {min:e}")));
    }
    if min >= 0.0 {
        return Ok(Some(sym));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(Some(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

#[derive(Clone, Debug)]
struct Candidate {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    match a.value.total_cmp(&b.value) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            for (x, y) in a.theta.iter().zip(&b.theta) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    _ => {}
                }
            }
            false
        }
    }
}

fn starting_points(model: &ModelSpec, series: &CountSeries, bx: &ParamBox, region: &Region, options: &FitOptions) -> Result<Vec<Vec<f64>>> {
    let first = match (&options.initial, model) {
        (Some(init), _) => {
            if init.dim() != model.dim() {
                return Err(Error::Dimension { expected: model.dim(), got: init.dim() });
            }
            let mut v = init.as_slice().to_vec();
            region.project(&mut v);
            v
        }
        (None, ModelSpec::Linear) => mom_initialize_in(series, bx)?.into_vec(),
        (None, ModelSpec::Custom(_)) => {
            return Err(Error::UnsupportedModel("custom links need FitOptions::initial".into()));
        }
    };
    let mut starts = vec![first.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(options.jitter_seed);
    for _ in 0..options.restarts {
        let mut p: Vec<f64> = first
            .iter()
            .zip(bx.lower.iter().zip(&bx.upper))
            .map(|(v, (lo, hi))| v + 0.1 * (hi - lo) * rng.random_range(-1.0..=1.0))
            .collect();
        region.project(&mut p);
        starts.push(p);
    }
    Ok(starts)
}

fn boundary_flags(model: &ModelSpec, theta: &[f64], bx: &ParamBox) -> Vec<bool> {
    let tol = 1e-6;
    let mut flags: Vec<bool> = theta
        .iter()
        .zip(bx.lower.iter().zip(&bx.upper))
        .map(|(v, (lo, hi))| v - lo <= tol || hi - v <= tol)
        .collect();
    if model.is_linear() && 1.0 - DELTA_S - (theta[1] + theta[2]) <= tol {
        flags[1] = true;
        flags[2] = true;
    }
    flags
}

/// Minimum density power divergence estimate of θ over the parameter box.
///
/// Every start is minimized with the gradient method; a start whose
/// evaluation breaks down numerically is retried with a derivative-free
/// simplex. The best finite objective wins, ties broken by the
/// lexicographically smallest θ.
pub fn fit(model: &ModelSpec, series: &CountSeries, alpha: DpOrder, options: &FitOptions) -> Result<FitResult> {
    let d = model.dim();
    let n = series.len();
    if n < d + 1 {
        return Err(Error::Data(format!("need at least {} observations to fit {d} parameters, got {n}", d + 1)));
    }
    let bx = match &options.parameter_box {
        Some(b) => b.clone(),
        None if model.is_linear() => ParamBox::linear_default(series),
        None => return Err(Error::UnsupportedModel("custom links need an explicit parameter box".into())),
    };
    bx.validate(model)?;
    let region = bx.region(model);
    let lambda1 = options.lambda1.resolve(series)?;
    let eval = Evaluator::new(model, series, alpha, lambda1);
    let opts = MinimizeOptions { max_iterations: options.max_iterations, pg_tolerance: options.gradient_tolerance * n as f64 };

    let mut best: Option<Candidate> = None;
    let mut last_err = None;
    for start in starting_points(model, series, &bx, &region, options)? {
        let attempt = optim::projected_bfgs(|t| eval.value_and_grad(t), &start, &region, opts).or_else(|e| match e {
            Error::Numerical(_) => optim::projected_nelder_mead(|t| eval.value(t), &start, &region, 200 * options.max_iterations, 1e-10, 1e-12 * n as f64),
            other => Err(other),
        });
        match attempt {
            Ok(m) if m.value.is_finite() => {
                let cand = Candidate { theta: m.x, value: m.value, converged: m.converged, iterations: m.iterations };
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
            Ok(_) => last_err = Some(Error::Optimization("non-finite objective at the optimizer output".into())),
            Err(e) => last_err = Some(e),
        }
    }
    let Some(best) = best else {
        let why = last_err.map(|e| e.to_string()).unwrap_or_else(|| "no starting point".into());
        return Err(Error::Optimization(format!("all starts failed: {why}")));
    };

    let (value, scores) = eval.value_and_scores(&best.theta)?;
    let scores = ScoreSequence::from_flat(scores, d);
    let gradient = scores.total();
    let k = k_hat_from_scores(&scores, alpha);
    let j = curvature(&eval, &best.theta, alpha, n)?;
    let cov = sandwich(&k, &j, n)?;
    let on_boundary = boundary_flags(model, &best.theta, &bx);
    Ok(FitResult {
        theta_hat: ParamVector::new(best.theta),
        alpha,
        objective_value: value,
        converged: best.converged,
        iterations: best.iterations,
        on_boundary,
        gradient,
        k_hat: k,
        j_hat: j,
        sandwich_covariance: cov,
        lambda1,
        n,
        parameter_box: bx,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sim(theta: (f64, f64, f64), n: usize, seed: u64) -> CountSeries {
        ingarch::simulate(&ModelSpec::Linear, &ParamVector::linear(theta.0, theta.1, theta.2), n, 1000, seed).unwrap().series
    }

    #[test]
    fn constant_and_short_series_are_rejected() {
        let c = CountSeries::new(vec![3; 50]).unwrap();
        assert!(matches!(mom_initialize(&c), Err(Error::Data(_))));
        let short = CountSeries::new(vec![1, 2, 3]).unwrap();
        assert!(matches!(mom_initialize(&short), Err(Error::Data(_))));
        let zeros = CountSeries::new(vec![0; 20]).unwrap();
        assert!(mom_initialize(&zeros).is_err());
    }

    #[test]
    fn moment_start_inside_box() {
        for seed in 0..20 {
            let s = sim((2.0, 0.0, 0.0), 2000, seed);
            let th = mom_initialize(&s).unwrap();
            assert!(ingarch::validate_params(&ModelSpec::Linear, &th).unwrap().is_ok());
            let bx = ParamBox::linear_default(&s);
            assert!(bx.region(&ModelSpec::Linear).contains(th.as_slice()));
        }
    }

    #[test]
    fn model_rho1_endpoints() {
        assert_eq!(model_rho1(0.5, 0.0), 0.0);
        assert_relative_eq!(model_rho1(0.5, 0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn k_hat_hand_sum() {
        let s = ScoreSequence::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        assert_relative_eq!(k_hat_from_scores(&s, DpOrder::LIKELIHOOD)[(0, 0)], 1.0);
        let z = ScoreSequence::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(k_hat_from_scores(&z, DpOrder::LIKELIHOOD), DMatrix::zeros(2, 2));
    }

    #[test]
    fn fit_is_deterministic_and_converges() {
        let s = sim((2.0, 0.1, 0.2), 500, 11);
        for a in [0.0, 0.3] {
            let alpha = DpOrder::new(a).unwrap();
            let f1 = fit(&ModelSpec::Linear, &s, alpha, &FitOptions::default()).unwrap();
            let f2 = fit(&ModelSpec::Linear, &s, alpha, &FitOptions::default()).unwrap();
            assert_eq!(f1, f2);
            assert!(f1.converged);
            if !f1.any_on_boundary() {
                let gmax = f1.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(gmax <= 1e-7 * 500.0, "{gmax}");
            }
            let k = &f1.k_hat;
            assert_eq!(k, &k.transpose());
            assert!(k.clone().symmetric_eigen().eigenvalues.iter().all(|&v| v >= -1e-12));
            assert_eq!(f1.j_hat, f1.j_hat.transpose());
        }
    }

    #[test]
    fn custom_link_needs_initial_guess() {
        #[derive(Debug)]
        struct Flat;
        impl ingarch::LinkFunction for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, th: &[f64], _l: f64, _x: u64) -> f64 {
                th[0]
            }
            fn grad_theta(&self, _th: &[f64], _l: f64, _x: u64, out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn d_lambda(&self, _th: &[f64], _l: f64, _x: u64) -> f64 {
                0.0
            }
            fn contraction(&self, _th: &[f64]) -> f64 {
                0.0
            }
        }
        let m = ModelSpec::Custom(std::sync::Arc::new(Flat));
        let s = sim((3.0, 0.0, 0.0), 400, 5);
        assert!(matches!(fit(&m, &s, DpOrder::LIKELIHOOD, &FitOptions::default()), Err(Error::UnsupportedModel(_))));
        let opts = FitOptions {
            parameter_box: Some(ParamBox { lower: vec![0.01], upper: vec![20.0] }),
            initial: Some(ParamVector::new(vec![1.0])),
            lambda1: InitialIntensity::Fixed(3.0),
            ..FitOptions::default()
        };
        let f = fit(&m, &s, DpOrder::LIKELIHOOD, &opts).unwrap();
        // λ̃_1 is fixed, so the MLE averages x_2..x_n
        let tail_mean = s.as_slice()[1..].iter().sum::<u64>() as f64 / (s.len() - 1) as f64;
        assert_relative_eq!(f.theta_hat.as_slice()[0], tail_mean, max_relative = 1e-8);
    }

    #[test]
    fn sandwich_rejects_indefinite_input() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let j = DMatrix::identity(2, 2);
        assert!(matches!(sandwich(&k, &j, 1), Err(Error::Numerical(_))));
        assert_eq!(sandwich(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), 1).unwrap(), None);
    }
}
