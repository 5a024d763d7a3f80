//! Additive (AO) and innovation (IO) outlier schemes.
//!
//! AO: `X_o,t = X_t + p_t·X_c,t`. IO: the intensity becomes
//! `λ_o,t = λ_t + p_t·λ_c,t` before the Poisson draw. In both,
//! `p_t ~ Bernoulli(p)` and the contaminating draw is `Poisson(γ)`.
//!
//! Contamination variables come from their own stream (`seed ^ CONTAMINATION_STREAM`),
//! drawn every step whether or not they are used, so switching contamination
//! on or off never moves the clean series' draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingarch::{self, Change, CountSeries, ModelSpec, ParamVector, SimulatedPath};

/// XOR mask deriving the contamination stream from a replication seed.
pub const CONTAMINATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContaminationKind {
    #[serde(rename = "AO", alias = "ao")]
    Additive,
    #[serde(rename = "IO", alias = "io")]
    Innovation,
}

impl ContaminationKind {
    pub fn label(self) -> &'static str {
        match self {
            ContaminationKind::Additive => "AO",
            ContaminationKind::Innovation => "IO",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    pub p: f64,
    pub gamma: f64,
}

impl ContaminationSpec {
    pub fn new(kind: ContaminationKind, p: f64, gamma: f64) -> Result<Self> {
        let spec = Self { kind, p, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("contamination probability must lie in [0,1], got {}", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("contamination mean γ must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// How the IO-shocked intensity enters the next recursion step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoPropagation {
    /// `λ_{t+1} = f(λ_o,t, X_t)`.
    #[default]
    Full,
    /// `λ_{t+1} = f(λ_t, X_t)`; the shock only affects the draw.
    CleanRecursion,
}

/// A contaminated series and its outlier indicators `p_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contaminated {
    pub series: CountSeries,
    pub indicators: Vec<bool>,
    /// Generating intensities (IO only).
    pub lambda: Option<Vec<f64>>,
}

struct OutlierStream {
    rng: ChaCha8Rng,
    p: f64,
    gamma: f64,
}

impl OutlierStream {
    fn new(seed: u64, spec: &ContaminationSpec) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed ^ CONTAMINATION_STREAM), p: spec.p, gamma: spec.gamma }
    }

    /// `(p_t, contaminating draw)`.
    fn next(&mut self) -> Result<(bool, u64)> {
        let hit = self.rng.random_bool(self.p);
        let c = ingarch::draw_poisson(&mut self.rng, self.gamma)?;
        Ok((hit, c))
    }
}

/// `X_o,t = X_t + p_t·X_c,t` for given indicators and draws.
pub fn apply_ao(series: &CountSeries, indicators: &[bool], draws: &[u64]) -> Result<CountSeries> {
    if indicators.len() != series.len() || draws.len() != series.len() {
        return Err(Error::Data("indicator and draw sequences must match the series length".into()));
    }
    let out = series
        .as_slice()
        .iter()
        .zip(indicators.iter().zip(draws))
        .map(|(&x, (&hit, &c))| if hit { x + c } else { x })
        .collect();
    CountSeries::new(out)
}

/// Additive outliers on an existing series.
pub fn contaminate_ao(series: &CountSeries, spec: &ContaminationSpec, seed: u64) -> Result<Contaminated> {
    spec.validate()?;
    if spec.kind != ContaminationKind::Additive {
        return Err(Error::Config("contaminate_ao requires an AO specification".into()));
    }
    let mut stream = OutlierStream::new(seed, spec);
    let mut indicators = Vec::with_capacity(series.len());
    let mut draws = Vec::with_capacity(series.len());
    for _ in 0..series.len() {
        let (hit, c) = stream.next()?;
        indicators.push(hit);
        draws.push(c);
    }
    let out = apply_ao(series, &indicators, &draws)?;
    Ok(Contaminated { series: out, indicators, lambda: None })
}

/// Simulates an IO-contaminated path; burn-in steps are contaminated too.
pub fn simulate_io(
    model: &ModelSpec,
    theta: &ParamVector,
    n: usize,
    burn_in: usize,
    spec: &ContaminationSpec,
    seed: u64,
    propagation: IoPropagation,
) -> Result<Contaminated> {
    simulate_io_with_change(model, theta, None, n, burn_in, spec, seed, propagation)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_io_with_change(
    model: &ModelSpec,
    theta0: &ParamVector,
    change: Option<Change<'_>>,
    n: usize,
    burn_in: usize,
    spec: &ContaminationSpec,
    seed: u64,
    propagation: IoPropagation,
) -> Result<Contaminated> {
    spec.validate()?;
    if spec.kind != ContaminationKind::Innovation {
        return Err(Error::Config("simulate_io requires an IO specification".into()));
    }
    let mut stream = OutlierStream::new(seed, spec);
    let mut failure = None;
    let shock = || match stream.next() {
        Ok((hit, c)) => (if hit { c as f64 } else { 0.0 }, hit),
        Err(e) => {
            failure = Some(e);
            (0.0, false)
        }
    };
    let draw = ingarch::run_process(model, theta0, change, n, burn_in, seed, shock, propagation == IoPropagation::Full)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Contaminated { series: CountSeries::new(draw.x)?, indicators: draw.shocked, lambda: Some(draw.lambda) })
}

impl From<SimulatedPath> for Contaminated {
    fn from(p: SimulatedPath) -> Self {
        let n = p.series.len();
        Self { series: p.series, indicators: vec![false; n], lambda: Some(p.lambda) }
    }
}
