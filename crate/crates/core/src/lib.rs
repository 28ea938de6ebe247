//! Adaptive combination of conditional average treatment effect (CATE)
//! estimators built from a randomized trial and an observational study
//! sampled in parallel.
//!
//! The pipeline runs in stages:
//!
//! 1. [`data`]: ingest pooled trial/OS records, split into training and
//!    validation parts, and reduce covariates `X` to the smoothing variable `V`.
//! 2. [`nuisance`]: fit parametric working models for the propensity score,
//!    the mean outcome, and OS participation.
//! 3. [`pseudo`]: build doubly-robust pseudo-outcomes per study.
//! 4. [`kernel`]: smooth pseudo-outcomes over `V` with a locally constant
//!    kernel estimator, yielding the trial and OS base estimators and their
//!    plug-in influence functions.
//! 5. [`combiner`]: estimate the OS weight `η` at each point by penalized
//!    least squares on the influence functions and form the combined
//!    estimate with standard errors.
//! 6. [`tuning`]: choose the lasso penalty by out-of-sample integrated
//!    squared error against a validation-set trial estimator.
//!
//! [`pipeline`] wires the stages together, [`simulation`] provides the
//! Monte Carlo harness, and [`cli`] backs the `catefuse` binary.

pub mod cli;
pub mod combiner;
pub mod data;
pub mod error;
pub mod kernel;
pub mod nuisance;
pub mod pipeline;
pub mod pseudo;
pub mod simulation;
pub mod tuning;

pub use combiner::{CombinedEstimate, CombinerConfig, Method, SeVariant};
pub use data::{EvaluationGrid, ReductionSpec, StudyDataset, UnitRecord};
pub use error::{Error, Result};
pub use kernel::{BaseEstimate, KernelConfig};
pub use nuisance::{CoefficientVector, FittedNuisances, Link};
pub use pipeline::{EstimationReport, FittedPipeline, PipelineConfig};
pub use pseudo::PseudoOutcomePanel;
pub use simulation::{MetricsReport, Scenario, ScenarioConfig};
pub use tuning::{LambdaGrid, TuningResult};
