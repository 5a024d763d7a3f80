//! Command-line front end.
//!
//! Exit codes: 0 success, 2 rejection (`test` only), 1 error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpcpt::change_test::{self, BridgeOptions, CriticalValue, CriticalValueTable, Provenance};
use dpcpt::contamination::{self, ContaminationKind, ContaminationSpec, IoPropagation};
use dpcpt::harness::{self, ExperimentConfig, TableFormat};
use dpcpt::ingarch::{self, InitialIntensity};
use dpcpt::parallel::{self, Execution};
use dpcpt::{io, DpOrder, Error, FitOptions, ModelSpec, ParamVector, Result};

#[derive(Parser)]
#[command(name = "dpcpt", version, about = "Robust parameter-change test for Poisson autoregressive count series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Propagation {
    Full,
    Clean,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an INGARCH(1,1) series, optionally with innovation outliers.
    Simulate {
        #[arg(long)]
        w: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Innovation outlier probability.
        #[arg(long, requires = "io_gamma")]
        io_p: Option<f64>,
        /// Mean of the innovation outlier intensity.
        #[arg(long, requires = "io_p")]
        io_gamma: Option<f64>,
        /// Whether the shocked intensity feeds the recursion.
        #[arg(long, value_enum, default_value = "full")]
        io_propagation: Propagation,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add additive outliers to a series.
    Contaminate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimum density power divergence fit.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Starting intensity: `mean` or a positive number.
        #[arg(long, default_value = "mean")]
        lambda1: String,
        /// JSON output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test for a parameter change.
    Test {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long, default_value = "mean")]
        lambda1: String,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include the scanned trajectory in the report.
        #[arg(long)]
        trajectory: bool,
        /// Critical value cache (CSV) to load first.
        #[arg(long)]
        critical_values: Option<PathBuf>,
    },
    /// Simulate critical values of the supremum of a squared Brownian bridge norm.
    McCritical {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = change_test::DEFAULT_BRIDGE_GRID)]
        grid: usize,
        #[arg(long, default_value_t = change_test::DEFAULT_BRIDGE_REPS)]
        reps: usize,
        #[arg(long, default_value_t = change_test::DEFAULT_BRIDGE_SEED)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.10")]
        levels: Vec<f64>,
        /// Report raw grid maxima without the discrete-monitoring correction.
        #[arg(long)]
        no_correction: bool,
        /// Merge the results into this cache file.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run a Monte Carlo size/power experiment.
    Experiment {
        /// One ExperimentConfig or an array of them (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full results (per-replication records) as JSON.
        #[arg(long)]
        results_json: Option<PathBuf>,
        #[arg(long)]
        critical_values: Option<PathBuf>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?))
}

fn parse_lambda1(s: &str) -> Result<InitialIntensity> {
    if s.eq_ignore_ascii_case("mean") {
        return Ok(InitialIntensity::SampleMean);
    }
    let v: f64 = s.parse().map_err(|_| Error::Config(format!("--lambda1 must be 'mean' or a number, got '{s}'")))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("--lambda1 must be nonnegative, got {v}")));
    }
    Ok(InitialIntensity::Fixed(v))
}

fn load_critical_values(path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        change_test::merge_into_cache(&CriticalValueTable::read_csv(open(p)?)?);
    }
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Simulate { w, a, b, n, burn_in, seed, io_p, io_gamma, io_propagation, out } => {
            let theta = ParamVector::linear(w, a, b);
            match (io_p, io_gamma) {
                (Some(p), Some(gamma)) => {
                    let spec = ContaminationSpec::new(ContaminationKind::Innovation, p, gamma)?;
                    let prop = match io_propagation {
                        Propagation::Full => IoPropagation::Full,
                        Propagation::Clean => IoPropagation::CleanRecursion,
                    };
                    let c = contamination::simulate_io(&ModelSpec::Linear, &theta, n, burn_in, &spec, seed, prop)?;
                    io::write_contaminated_csv(create(&out)?, &c.series, &c)?;
                }
                _ => {
                    let path = ingarch::simulate(&ModelSpec::Linear, &theta, n, burn_in, seed)?;
                    io::write_series_csv(create(&out)?, &path.series, Some(&path.lambda))?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Contaminate { input, p, gamma, seed, out } => {
            let series = io::read_series_csv(open(&input)?)?;
            let spec = ContaminationSpec::new(ContaminationKind::Additive, p, gamma)?;
            let c = contamination::contaminate_ao(&series, &spec, seed)?;
            io::write_contaminated_csv(create(&out)?, &series, &c)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { input, alpha, lambda1, out } => {
            let series = io::read_series_csv(open(&input)?)?;
            let options = FitOptions { lambda1: parse_lambda1(&lambda1)?, ..FitOptions::default() };
            let f = dpcpt::fit(&ModelSpec::Linear, &series, DpOrder::new(alpha)?, &options)?;
            let json = serde_json::to_string_pretty(&f.report())?;
            match out {
                Some(p) => {
                    let mut w = create(&p)?;
                    writeln!(w, "{json}")?;
                    println!("theta_hat={} objective={} converged={}", f.theta_hat, f.objective_value, f.converged);
                }
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Test { input, alpha, level, lambda1, out, trajectory, critical_values } => {
            load_critical_values(critical_values.as_deref())?;
            let series = io::read_series_csv(open(&input)?)?;
            let options = FitOptions { lambda1: parse_lambda1(&lambda1)?, ..FitOptions::default() };
            let t = change_test::dp_score_statistic(&ModelSpec::Linear, &series, DpOrder::new(alpha)?, &options, &[level])?;
            let d = &t.decisions[0];
            println!(
                "statistic={:.6} threshold={:.4} decision={} argmax_k={}",
                t.statistic,
                d.threshold,
                if d.reject { "reject" } else { "accept" },
                t.argmax_k
            );
            if let Some(p) = out {
                let mut w = create(&p)?;
                writeln!(w, "{}", serde_json::to_string_pretty(&t.report(trajectory))?)?;
            }
            Ok(if d.reject { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::McCritical { d, grid, reps, seed, levels, no_correction, cache } => {
            let options = BridgeOptions { execution: Execution::Parallel, continuity_correction: !no_correction };
            let workers = parallel::worker_count(None);
            let q = parallel::with_workers(workers, || change_test::simulate_sup_bridge_quantiles_with(d, grid, reps, &levels, seed, options))?;
            println!("d,level,threshold");
            for (level, threshold) in &q {
                println!("{d},{level},{threshold:.4}");
            }
            if let Some(path) = cache {
                let mut table = if path.exists() { CriticalValueTable::read_csv(open(&path)?)? } else { CriticalValueTable::builtin() };
                for &(level, threshold) in &q {
                    table.insert(CriticalValue { d, level, threshold, provenance: Provenance::Simulated { grid, reps, seed } });
                }
                table.write_csv(create(&path)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { config, out, results_json, critical_values } => {
            load_critical_values(critical_values.as_deref())?;
            let value: serde_json::Value = serde_json::from_reader(open(&config)?)?;
            let configs: Vec<ExperimentConfig> = match value {
                serde_json::Value::Array(_) => serde_json::from_value(value)?,
                other => vec![serde_json::from_value(other)?],
            };
            let mut results = Vec::with_capacity(configs.len());
            for c in &configs {
                let r = harness::run_experiment(c)?;
                eprintln!(
                    "theta0={} n={} replications={} done in {:.1}s",
                    c.theta0, c.n, c.replications, r.metadata.wall_time_secs
                );
                results.push(r);
            }
            let mut w = create(&out)?;
            w.write_all(harness::emit_table(&results, TableFormat::Csv)?.as_bytes())?;
            if let Some(p) = results_json {
                let mut w = create(&p)?;
                writeln!(w, "{}", serde_json::to_string_pretty(&results)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
