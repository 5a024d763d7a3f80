//! Poisson autoregressive count model.
//!
//! Counts follow `X_t | past ~ Poisson(λ_t)` with the intensity driven by a
//! link `λ_t = f_θ(λ_{t-1}, X_{t-1})`. The built-in link is the linear
//! INGARCH(1,1) map `f = w + a·λ + b·x`; other links plug in through
//! [`LinkFunction`].
//!
//! The filters here run the recursion on observed data from a caller-chosen
//! starting intensity `λ̃_1`, optionally carrying the parameter gradient
//! `∂λ̃_t/∂θ` alongside via the chain rule.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on every intensity value (and on the intercept `w`).
pub const DELTA_L: f64 = 1e-4;
/// Stationarity margin: the linear model requires `a + b <= 1 - DELTA_S`.
pub const DELTA_S: f64 = 1e-3;

/// Parameter vector θ. For the linear model the layout is `(w, a, b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Linear INGARCH(1,1) parameters.
    pub fn linear(w: f64, a: f64, b: f64) -> Self {
        Self(vec![w, a, b])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// A user-supplied intensity link `f_θ(λ, x)`.
///
/// Implementors promise `f_θ(λ, x) >= DELTA_L` on the admissible parameter
/// set and a Lipschitz contraction bound `κ < 1` in `(λ, x)`. Neither can be
/// verified here beyond what [`LinkFunction::check`] reports; the moment and
/// differentiability conditions needed for the asymptotic theory are the
/// implementor's obligation.
pub trait LinkFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, theta: &[f64], lambda: f64, x: u64) -> f64;
    /// Writes `∂f/∂θ` into `out` (length `dim()`).
    fn grad_theta(&self, theta: &[f64], lambda: f64, x: u64, out: &mut [f64]);
    fn d_lambda(&self, theta: &[f64], lambda: f64, x: u64) -> f64;
    /// Declared contraction bound κ = κ₁ + κ₂.
    fn contraction(&self, theta: &[f64]) -> f64;
    /// Extra model-specific constraint checks.
    fn check(&self, _theta: &[f64]) -> Vec<String> {
        Vec::new()
    }
}

/// Model family selector.
#[derive(Clone, Debug, Default)]
pub enum ModelSpec {
    /// `f = w + a·λ + b·x`.
    #[default]
    Linear,
    Custom(Arc<dyn LinkFunction>),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Linear => 3,
            ModelSpec::Custom(link) => link.dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModelSpec::Linear)
    }

    #[inline]
    pub fn eval(&self, theta: &[f64], lambda: f64, x: u64) -> f64 {
        match self {
            ModelSpec::Linear => theta[0] + theta[1] * lambda + theta[2] * x as f64,
            ModelSpec::Custom(link) => link.eval(theta, lambda, x),
        }
    }

    #[inline]
    fn grad_theta(&self, theta: &[f64], lambda: f64, x: u64, out: &mut [f64]) {
        match self {
            ModelSpec::Linear => {
                out[0] = 1.0;
                out[1] = lambda;
                out[2] = x as f64;
            }
            ModelSpec::Custom(link) => link.grad_theta(theta, lambda, x, out),
        }
    }

    #[inline]
    fn d_lambda(&self, theta: &[f64], lambda: f64, x: u64) -> f64 {
        match self {
            ModelSpec::Linear => theta[1],
            ModelSpec::Custom(link) => link.d_lambda(theta, lambda, x),
        }
    }

    pub fn contraction(&self, theta: &[f64]) -> f64 {
        match self {
            ModelSpec::Linear => theta[1] + theta[2],
            ModelSpec::Custom(link) => link.contraction(theta),
        }
    }
}

/// A single violated parameter constraint.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    InterceptBelowFloor { w: f64 },
    NegativeCoefficient { name: &'static str, value: f64 },
    Persistence { sum: f64 },
    Contraction { kappa: f64 },
    NonFinite { index: usize },
    Custom(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InterceptBelowFloor { w } => write!(f, "w < δ_L (w = {w})"),
            Violation::NegativeCoefficient { name, value } => write!(f, "{name} < 0 ({name} = {value})"),
            Violation::Persistence { sum } => write!(f, "a+b ≥ 1−δ_S (a+b = {sum})"),
            Violation::Contraction { kappa } => write!(f, "κ ≥ 1 (κ = {kappa})"),
            Violation::NonFinite { index } => write!(f, "θ[{index}] is not finite"),
            Violation::Custom(msg) => f.write_str(msg),
        }
    }
}

/// Outcome of [`validate_params`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidParams(msg))
        }
    }
}

/// Checks θ against the admissible parameter set of `model`.
pub fn validate_params(model: &ModelSpec, theta: &ParamVector) -> Result<ValidationReport> {
    let d = model.dim();
    if theta.dim() != d {
        return Err(Error::Dimension { expected: d, got: theta.dim() });
    }
    let th = theta.as_slice();
    let mut violations = Vec::new();
    for (index, v) in th.iter().enumerate() {
        if !v.is_finite() {
            violations.push(Violation::NonFinite { index });
        }
    }
    if !violations.is_empty() {
        return Ok(ValidationReport { violations });
    }
    match model {
        ModelSpec::Linear => {
            let (w, a, b) = (th[0], th[1], th[2]);
            if w < DELTA_L {
                violations.push(Violation::InterceptBelowFloor { w });
            }
            if a < 0.0 {
                violations.push(Violation::NegativeCoefficient { name: "a", value: a });
            }
            if b < 0.0 {
                violations.push(Violation::NegativeCoefficient { name: "b", value: b });
            }
            // small slack so box projections onto the face are accepted
            if a + b > 1.0 - DELTA_S + 1e-12 {
                violations.push(Violation::Persistence { sum: a + b });
            }
        }
        ModelSpec::Custom(link) => {
            let kappa = link.contraction(th);
            if !(kappa < 1.0) {
                violations.push(Violation::Contraction { kappa });
            }
            violations.extend(link.check(th).into_iter().map(Violation::Custom));
        }
    }
    Ok(ValidationReport { violations })
}

/// Observed counts `X_1..X_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountSeries(Vec<u64>);

impl CountSeries {
    pub fn new(x: Vec<u64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Data("count series must contain at least one observation".into()));
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().map(|&v| v as f64).sum::<f64>() / self.0.len() as f64
    }

    pub fn into_vec(self) -> Vec<u64> {
        self.0
    }
}

/// Filtered intensities `λ̃_t` and (optionally) their parameter gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityPath {
    pub lambda: Vec<f64>,
    /// Row-major `n × d`; empty when only intensities were requested.
    grad: Vec<f64>,
    dim: usize,
    pub lambda1: f64,
}

impl IntensityPath {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn has_grad(&self) -> bool {
        !self.grad.is_empty()
    }

    /// `∂λ̃_t/∂θ` for zero-based `t`.
    pub fn grad(&self, t: usize) -> &[f64] {
        &self.grad[t * self.dim..(t + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Starting intensity for the filter recursion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialIntensity {
    /// The sample mean of the series being filtered.
    #[default]
    SampleMean,
    Fixed(f64),
}


impl InitialIntensity {
    /// Resolves to a concrete value, clamped to `DELTA_L`.
    pub fn resolve(self, series: &CountSeries) -> Result<f64> {
        let v = match self {
            InitialIntensity::SampleMean => series.mean(),
            InitialIntensity::Fixed(v) => v,
        };
        check_lambda1(v)
    }
}

fn check_lambda1(lambda1: f64) -> Result<f64> {
    if !lambda1.is_finite() || lambda1 < 0.0 {
        return Err(Error::Data(format!("initial intensity must be finite and nonnegative, got {lambda1}")));
    }
    Ok(lambda1.max(DELTA_L))
}

/// Runs the intensity recursion into `lambda` (and `grad` when given) without
/// validating θ. Callers guarantee θ is admissible.
pub(crate) fn filter_into(
    model: &ModelSpec,
    theta: &[f64],
    x: &[u64],
    lambda1: f64,
    lambda: &mut Vec<f64>,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<()> {
    let n = x.len();
    let d = theta.len();
    lambda.clear();
    lambda.reserve(n);
    lambda.push(lambda1);
    if let Some(g) = grad.as_deref_mut() {
        g.clear();
        g.resize(n * d, 0.0);
    }
    let mut df = vec![0.0; d];
    for t in 1..n {
        let prev = lambda[t - 1];
        let xp = x[t - 1];
        let next = model.eval(theta, prev, xp);
        if !next.is_finite() || next < DELTA_L {
            return Err(Error::Numerical(format!("intensity λ̃_{} = {next} is non-finite or below δ_L", t + 1)));
        }
        lambda.push(next);
        if let Some(g) = grad.as_deref_mut() {
            model.grad_theta(theta, prev, xp, &mut df);
            let dl = model.d_lambda(theta, prev, xp);
            let (head, tail) = g.split_at_mut(t * d);
            let before = &head[(t - 1) * d..];
            for i in 0..d {
                tail[i] = df[i] + dl * before[i];
            }
        }
    }
    Ok(())
}

fn admissible(model: &ModelSpec, theta: &ParamVector) -> Result<()> {
    validate_params(model, theta)?.into_result()
}

/// Filters intensities only. `lambda1` below `DELTA_L` is clamped.
pub fn intensity_filter(
    model: &ModelSpec,
    theta: &ParamVector,
    series: &CountSeries,
    lambda1: f64,
) -> Result<IntensityPath> {
    admissible(model, theta)?;
    let lambda1 = check_lambda1(lambda1)?;
    let mut lambda = Vec::new();
    filter_into(model, theta.as_slice(), series.as_slice(), lambda1, &mut lambda, None)?;
    Ok(IntensityPath { lambda, grad: Vec::new(), dim: theta.dim(), lambda1 })
}

/// Filters intensities together with `∂λ̃_t/∂θ`. The starting value does not
/// depend on θ, so the first gradient row is zero.
pub fn intensity_and_gradient_filter(
    model: &ModelSpec,
    theta: &ParamVector,
    series: &CountSeries,
    lambda1: f64,
) -> Result<IntensityPath> {
    admissible(model, theta)?;
    let lambda1 = check_lambda1(lambda1)?;
    let mut lambda = Vec::new();
    let mut grad = Vec::new();
    filter_into(model, theta.as_slice(), series.as_slice(), lambda1, &mut lambda, Some(&mut grad))?;
    Ok(IntensityPath { lambda, grad, dim: theta.dim(), lambda1 })
}

/// `E[X_t] = w / (1 - a - b)` for the stationary linear model.
pub fn stationary_mean(model: &ModelSpec, theta: &ParamVector) -> Result<f64> {
    if !model.is_linear() {
        return Err(Error::UnsupportedModel("stationary_mean is only available in closed form for the linear link".into()));
    }
    admissible(model, theta)?;
    let th = theta.as_slice();
    Ok(th[0] / (1.0 - th[1] - th[2]))
}

/// A simulated path: observed counts plus the intensity that generated each.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath {
    pub series: CountSeries,
    pub lambda: Vec<f64>,
}

/// A mid-sample parameter change: observations with one-based index
/// `> after` are generated under `theta`.
#[derive(Clone, Copy, Debug)]
pub struct Change<'a> {
    pub theta: &'a ParamVector,
    pub after: usize,
}

pub(crate) struct ProcessDraw {
    pub x: Vec<u64>,
    pub lambda: Vec<f64>,
    pub shocked: Vec<bool>,
}

/// Draws `Poisson(lambda)`. `lambda` must be positive and finite.
#[inline]
pub(crate) fn draw_poisson<R: rand::Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u64> {
    let dist = Poisson::new(lambda).map_err(|e| Error::Numerical(format!("Poisson({lambda}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Shared simulation engine.
///
/// `shock` is called once per step (burn-in included) and returns an
/// additive intensity shock (0 for none) plus the outlier indicator recorded
/// for that step. With `propagate` the shocked
/// intensity feeds the next recursion step; otherwise the clean intensity
/// does. The recorded intensity is the one used for the draw.
pub(crate) fn run_process<F>(
    model: &ModelSpec,
    theta0: &ParamVector,
    change: Option<Change<'_>>,
    n: usize,
    burn_in: usize,
    seed: u64,
    mut shock: F,
    propagate: bool,
) -> Result<ProcessDraw>
where
    F: FnMut() -> (f64, bool),
{
    admissible(model, theta0)?;
    if let Some(c) = change {
        admissible(model, c.theta)?;
    }
    if n == 0 {
        return Err(Error::Data("simulation length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = burn_in + n;
    let mut out = ProcessDraw {
        x: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        shocked: Vec::with_capacity(n),
    };
    // λ_1 = 0, clamped so the first draw is well defined
    let mut state = DELTA_L;
    let mut prev_x = 0u64;
    for step in 0..total {
        let obs_index = step as isize - burn_in as isize + 1;
        let theta = match change {
            Some(c) if obs_index > c.after as isize => c.theta.as_slice(),
            _ => theta0.as_slice(),
        };
        let clean = if step == 0 { state } else { model.eval(theta, state, prev_x) };
        if !clean.is_finite() || clean < DELTA_L {
            return Err(Error::Numerical(format!("simulated intensity {clean} invalid at step {step}")));
        }
        let (s, hit) = shock();
        let used = clean + s;
        let x = draw_poisson(&mut rng, used)?;
        state = if propagate { used } else { clean };
        prev_x = x;
        if step >= burn_in {
            out.x.push(x);
            out.lambda.push(used);
            out.shocked.push(hit);
        }
    }
    Ok(out)
}

/// Simulates `n` observations after discarding `burn_in`, starting from
/// `λ_1 = 0` (clamped to `DELTA_L`). Deterministic in `seed`.
pub fn simulate(model: &ModelSpec, theta: &ParamVector, n: usize, burn_in: usize, seed: u64) -> Result<SimulatedPath> {
    simulate_with_change(model, theta, None, n, burn_in, seed)
}

/// Like [`simulate`], switching parameters mid-sample. The intensity
/// recursion carries across the change point.
pub fn simulate_with_change(
    model: &ModelSpec,
    theta0: &ParamVector,
    change: Option<Change<'_>>,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SimulatedPath> {
    let draw = run_process(model, theta0, change, n, burn_in, seed, || (0.0, false), true)?;
    Ok(SimulatedPath { series: CountSeries::new(draw.x)?, lambda: draw.lambda })
}
