//! Robust detection of parameter change in Poisson autoregressive count
//! series.
//!
//! The pieces, bottom up:
//!
//! - [`ingarch`]: the INGARCH(1,1) intensity recursion, its parameter
//!   gradient, and seeded simulation.
//! - [`divergence`]: the density power divergence loss for Poisson
//!   observations and its derivative.
//! - [`mdpde`]: minimum divergence estimation with `K̂`, `Ĵ` and the sandwich
//!   covariance.
//! - [`change_test`]: the score-based change statistic `T_n^α` and its
//!   Brownian-bridge critical values.
//! - [`contamination`]: additive and innovation outliers.
//! - [`harness`]: Monte Carlo size/power experiments and result tables.
//!
//! ```
//! use dpcpt::{change_test, ingarch, DpOrder, FitOptions, ModelSpec, ParamVector};
//!
//! let theta = ParamVector::linear(2.0, 0.1, 0.2);
//! let path = ingarch::simulate(&ModelSpec::Linear, &theta, 300, 1000, 7).unwrap();
//! let alpha = DpOrder::new(0.2).unwrap();
//! let t = change_test::dp_score_statistic(&ModelSpec::Linear, &path.series, alpha, &FitOptions::default(), &[0.05]).unwrap();
//! assert!(t.statistic >= 0.0);
//! ```

pub mod contamination;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod ingarch;
pub mod io;
pub mod mdpde;
pub mod optim;
pub mod parallel;

pub use change_test::{dp_score_statistic, TestResult};
pub use contamination::{ContaminationKind, ContaminationSpec, IoPropagation};
pub use divergence::DpOrder;
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentResult};
pub use ingarch::{CountSeries, InitialIntensity, ModelSpec, ParamVector};
pub use mdpde::{fit, FitOptions, FitResult};
pub use parallel::Execution;
