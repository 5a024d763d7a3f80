//! Monte Carlo size and power experiments.
//!
//! Replication `r` draws its series from seed `base_seed + r` (contamination
//! from the derived stream, see [`crate::contamination`]), runs the change
//! test at every configured α and tallies rejections. Replications are reduced
//! by index, so results do not depend on the worker count.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::change_test::{self, TestResult};
use crate::contamination::{self, ContaminationKind, ContaminationSpec, IoPropagation, CONTAMINATION_STREAM};
use crate::divergence::DpOrder;
use crate::error::{Error, Result};
use crate::ingarch::{self, Change, CountSeries, ModelSpec, ParamVector};
use crate::mdpde::FitOptions;
use crate::parallel::{self, Execution};

/// Share of failed replications (per α) above which an experiment aborts.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

fn default_replications() -> usize {
    1000
}

fn default_alphas() -> Vec<DpOrder> {
    [0.0, 0.1, 0.2, 0.3, 0.5, 1.0].iter().map(|&a| DpOrder::new(a).expect("valid order")).collect()
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.10]
}

fn default_burn_in() -> usize {
    1000
}

/// One size or power study. Deserializes from JSON; everything except
/// `theta0` and `n` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub theta0: ParamVector,
    /// Parameters after the change at `t = ⌊n/2⌋` (power runs).
    #[serde(default)]
    pub theta1: Option<ParamVector>,
    pub n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<DpOrder>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub contamination: Option<ContaminationSpec>,
    #[serde(default)]
    pub io_propagation: IoPropagation,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// `None` uses all cores (`DPCPT_THREADS` overrides either way).
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub fit: FitOptions,
}

impl ExperimentConfig {
    /// Size run with the default α grid and levels.
    pub fn new(theta0: ParamVector, n: usize, replications: usize, base_seed: u64) -> Self {
        Self {
            theta0,
            theta1: None,
            n,
            replications,
            alphas: default_alphas(),
            levels: default_levels(),
            contamination: None,
            io_propagation: IoPropagation::default(),
            burn_in: default_burn_in(),
            base_seed,
            workers: None,
            fit: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let model = ModelSpec::Linear;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.alphas.is_empty() || self.levels.is_empty() {
            return Err(Error::Config("alphas and levels must be nonempty".into()));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Config("levels must lie in (0,1)".into()));
        }
        if self.n < 10 * model.dim() {
            return Err(Error::Config(format!("n must be at least {} for the change test", 10 * model.dim())));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        ingarch::validate_params(&model, &self.theta0)?.into_result()?;
        if let Some(t1) = &self.theta1 {
            ingarch::validate_params(&model, t1)?.into_result()?;
        }
        if let Some(c) = &self.contamination {
            c.validate()?;
        }
        Ok(())
    }

    /// Observations with index above this are generated under `theta1`.
    pub fn change_after(&self) -> usize {
        self.n / 2
    }

    /// Same design apart from contamination, seeds and execution settings.
    pub fn same_design(&self, other: &Self) -> bool {
        self.theta0 == other.theta0 && self.theta1 == other.theta1 && self.n == other.n && self.burn_in == other.burn_in
    }
}

/// Rejection tally for one (α, level) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: f64,
    pub level: f64,
    pub threshold: f64,
    pub rejections: usize,
    /// Replications that produced a statistic (the rate denominator).
    pub successes: usize,
    pub rate: f64,
    /// `sqrt(r(1−r)/R)` with `R = successes`.
    pub mc_se: f64,
}

/// Per-α failure and ridge counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub failures: usize,
    /// Replications where `K̂` needed a ridge.
    pub ridged: usize,
    /// Replications whose estimate sat on the parameter box boundary.
    pub on_boundary: usize,
}

/// Outcome of one replication at one α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub statistic: f64,
    pub argmax_k: usize,
    pub reject: Vec<bool>,
    pub ridge_used: f64,
    pub on_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    /// One entry per configured α; `Err` holds the failure message.
    pub outcomes: Vec<std::result::Result<Outcome, String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub contamination_seed_mask: u64,
    pub workers: usize,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by α, then level, as configured.
    pub cells: Vec<Cell>,
    pub alphas: Vec<AlphaSummary>,
    pub records: Vec<ReplicationRecord>,
    pub metadata: ExperimentMetadata,
}

impl ExperimentResult {
    pub fn cell(&self, alpha: f64, level: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| close(c.alpha, alpha) && close(c.level, level))
    }

    pub fn rate(&self, alpha: f64, level: f64) -> Option<f64> {
        self.cell(alpha, level).map(|c| c.rate)
    }

    /// Everything except timing matches.
    pub fn same_outcomes(&self, other: &Self) -> bool {
        self.cells == other.cells && self.alphas == other.alphas && self.records == other.records
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Draws the (possibly contaminated, possibly changed) series for one replication.
pub fn replication_series(config: &ExperimentConfig, seed: u64) -> Result<CountSeries> {
    let model = ModelSpec::Linear;
    let change = config.theta1.as_ref().map(|t| Change { theta: t, after: config.change_after() });
    match &config.contamination {
        None => Ok(ingarch::simulate_with_change(&model, &config.theta0, change, config.n, config.burn_in, seed)?.series),
        Some(spec) => match spec.kind {
            ContaminationKind::Additive => {
                let clean = ingarch::simulate_with_change(&model, &config.theta0, change, config.n, config.burn_in, seed)?.series;
                Ok(contamination::contaminate_ao(&clean, spec, seed)?.series)
            }
            ContaminationKind::Innovation => Ok(contamination::simulate_io_with_change(
                &model,
                &config.theta0,
                change,
                config.n,
                config.burn_in,
                spec,
                seed,
                config.io_propagation,
            )?
            .series),
        },
    }
}

fn outcome(t: &TestResult, levels: &[f64]) -> Outcome {
    Outcome {
        statistic: t.statistic,
        argmax_k: t.argmax_k,
        reject: levels.iter().map(|&l| t.rejects_at(l).unwrap_or(false)).collect(),
        ridge_used: t.ridge_used,
        on_boundary: t.fit.as_ref().is_some_and(|f| f.any_on_boundary()),
    }
}

fn run_replication(config: &ExperimentConfig, r: usize) -> ReplicationRecord {
    let seed = config.base_seed.wrapping_add(r as u64);
    let outcomes = match replication_series(config, seed) {
        Err(e) => vec![Err(e.to_string()); config.alphas.len()],
        Ok(series) => config
            .alphas
            .iter()
            .map(|&a| {
                change_test::dp_score_statistic(&ModelSpec::Linear, &series, a, &config.fit, &config.levels)
                    .map(|t| outcome(&t, &config.levels))
                    .map_err(|e| e.to_string())
            })
            .collect(),
    };
    ReplicationRecord { replication: r, seed, outcomes }
}

/// Runs the experiment with parallel replications.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, Execution::Parallel)
}

pub fn run_experiment_with(config: &ExperimentConfig, execution: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let d = ModelSpec::Linear.dim();
    // resolve thresholds up front so no replication waits on a simulation
    let thresholds = config.levels.iter().map(|&l| change_test::critical_value(d, l)).collect::<Result<Vec<_>>>()?;
    let workers = parallel::worker_count(config.workers);
    let records = parallel::with_workers(workers, || parallel::map_indexed(config.replications, execution, |r| run_replication(config, r)));

    let total = config.replications;
    let mut cells = Vec::with_capacity(config.alphas.len() * config.levels.len());
    let mut alphas = Vec::with_capacity(config.alphas.len());
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        let ok: Vec<&Outcome> = records.iter().filter_map(|rec| rec.outcomes[ai].as_ref().ok()).collect();
        let failures = total - ok.len();
        if failures as f64 > MAX_FAILURE_SHARE * total as f64 {
            return Err(Error::ExperimentAborted { failed: failures, total });
        }
        alphas.push(AlphaSummary {
            alpha: alpha.value(),
            failures,
            ridged: ok.iter().filter(|o| o.ridge_used > 0.0).count(),
            on_boundary: ok.iter().filter(|o| o.on_boundary).count(),
        });
        for (li, (&level, &threshold)) in config.levels.iter().zip(&thresholds).enumerate() {
            let rejections = ok.iter().filter(|o| o.reject[li]).count();
            let successes = ok.len();
            let rate = if successes > 0 { rejections as f64 / successes as f64 } else { 0.0 };
            let mc_se = if successes > 0 { (rate * (1.0 - rate) / successes as f64).sqrt() } else { 0.0 };
            cells.push(Cell { alpha: alpha.value(), level, threshold, rejections, successes, rate, mc_se });
        }
    }

    Ok(ExperimentResult {
        config: config.clone(),
        cells,
        alphas,
        records,
        metadata: ExperimentMetadata {
            contamination_seed_mask: CONTAMINATION_STREAM,
            workers,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// `contaminated / clean`.
pub fn d_ratio(contaminated_rate: f64, clean_rate: f64) -> Result<f64> {
    if clean_rate <= 0.0 {
        return Err(Error::DegenerateRatio);
    }
    Ok(contaminated_rate / clean_rate)
}

/// Ratio of contaminated to clean rejection rates at (α, level).
pub fn compute_d_ratio(contaminated: &ExperimentResult, clean: &ExperimentResult, alpha: f64, level: f64) -> Result<f64> {
    if !contaminated.config.same_design(&clean.config) {
        return Err(Error::Config("d-ratio needs two runs of the same design".into()));
    }
    if clean.config.contamination.is_some() {
        return Err(Error::Config("the reference run for a d-ratio must be uncontaminated".into()));
    }
    let missing = || Error::Config(format!("no result for α = {alpha}, level = {level}"));
    let c = contaminated.rate(alpha, level).ok_or_else(missing)?;
    let r = clean.rate(alpha, level).ok_or_else(missing)?;
    d_ratio(c, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// One row of the emitted table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub theta0: String,
    pub theta1: Option<String>,
    pub n: usize,
    pub contamination_kind: String,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub level: f64,
    pub rate: f64,
    pub mc_se: f64,
    pub d_ratio: Option<f64>,
    pub failures: usize,
    pub seed: u64,
}

pub const TABLE_COLUMNS: [&str; 13] =
    ["theta0", "theta1", "n", "contamination_kind", "p", "gamma", "alpha", "level", "rate", "mc_se", "d_ratio", "failures", "seed"];

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Table rows; contaminated results are paired with a clean result of the
/// same design (if one is in `results`) to fill `d_ratio`.
pub fn table_rows(results: &[ExperimentResult]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for res in results {
        let cfg = &res.config;
        let clean = cfg
            .contamination
            .as_ref()
            .and_then(|_| results.iter().find(|o| o.config.contamination.is_none() && o.config.same_design(cfg)));
        for cell in &res.cells {
            let failures = res.alphas.iter().find(|a| close(a.alpha, cell.alpha)).map_or(0, |a| a.failures);
            let ratio = clean.and_then(|c| compute_d_ratio(res, c, cell.alpha, cell.level).ok());
            rows.push(TableRow {
                theta0: cfg.theta0.to_string(),
                theta1: cfg.theta1.as_ref().map(|t| t.to_string()),
                n: cfg.n,
                contamination_kind: cfg.contamination.map_or("none", |c| c.kind.label()).to_string(),
                p: cfg.contamination.map(|c| c.p),
                gamma: cfg.contamination.map(|c| c.gamma),
                alpha: cell.alpha,
                level: cell.level,
                rate: round4(cell.rate),
                mc_se: round4(cell.mc_se),
                d_ratio: ratio.map(round4),
                failures,
                seed: cfg.base_seed,
            });
        }
    }
    rows
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

/// Renders results as CSV (fixed column order, 4-decimal rates) or JSON.
pub fn emit_table(results: &[ExperimentResult], format: TableFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Config("no results to emit".into()));
    }
    let rows = table_rows(results);
    match format {
        TableFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        TableFormat::Csv => {
            let mut wr = csv::Writer::from_writer(Vec::new());
            wr.write_record(TABLE_COLUMNS)?;
            for r in &rows {
                let mut d = String::new();
                if let Some(v) = r.d_ratio {
                    write!(d, "{v:.4}").ok();
                }
                wr.write_record([
                    r.theta0.clone(),
                    opt(&r.theta1),
                    r.n.to_string(),
                    r.contamination_kind.clone(),
                    opt(&r.p),
                    opt(&r.gamma),
                    r.alpha.to_string(),
                    r.level.to_string(),
                    format!("{:.4}", r.rate),
                    format!("{:.4}", r.mc_se),
                    d,
                    r.failures.to_string(),
                    r.seed.to_string(),
                ])?;
            }
            let bytes = wr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

/// Reads a CSV table written by [`emit_table`].
pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}
