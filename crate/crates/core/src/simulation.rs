//! Monte Carlo harness for a parallel trial/OS design with a null effect.
//!
//! Covariates `X ~ N(0, I₄)`. OS membership `Z ~ Bernoulli(ϱ(X))` with
//! `ϱ(x) = expit(2.5 + 0.1·Σx)`, so about 8% of units land in the trial.
//! Treatment is 1:1 in the trial and `expit(-x₁ + .5x₂ - .25x₃ - .1x₄)` in
//! the OS. The outcome `Y = 210 + 27.4x₁ + 13.7(x₂ + x₃ + x₄) + ε` does not
//! depend on treatment, so the CATE is zero everywhere. The misspecified
//! scenario observes only nonlinear transforms of `X`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{CombinedEstimate, Z_975};
use crate::data::{EvaluationGrid, StudyDataset, UnitRecord};
use crate::error::{Error, Result};
use crate::nuisance::expit;
use crate::pipeline::{estimate, PipelineConfig};

pub const P: usize = 4;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

const PARTICIPATION: [f64; 5] = [2.5, 0.1, 0.1, 0.1, 0.1];
const OS_TREATMENT: [f64; 4] = [-1.0, 0.5, -0.25, -0.1];
const OUTCOME: [f64; 5] = [210.0, 27.4, 13.7, 13.7, 13.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Correct,
    Misspecified,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Correct => "correct",
            Scenario::Misspecified => "misspecified",
        }
    }

    /// Covariates as seen by the analyst.
    pub fn observe(self, x: &[f64; P]) -> Vec<f64> {
        match self {
            Scenario::Correct => x.to_vec(),
            Scenario::Misspecified => vec![
                (x[0] / 2.0).exp(),
                x[1] / (1.0 + x[0].exp()) + 10.0,
                (x[0] * x[2] / 25.0 + 0.6).powi(3),
                (x[1] + x[3] + 20.0).powi(2),
            ],
        }
    }
}

/// `ϱ(x) = P(Z = 1 | x)`.
pub fn os_probability(x: &[f64; P]) -> f64 {
    expit(PARTICIPATION[0] + (0..P).map(|j| PARTICIPATION[j + 1] * x[j]).sum::<f64>())
}

/// `π₁(x, z)`.
pub fn treatment_probability(x: &[f64; P], z: u8) -> f64 {
    expit(z as f64 * (0..P).map(|j| OS_TREATMENT[j] * x[j]).sum::<f64>())
}

/// `E(Y | x)`, the same under both treatments and in both studies.
pub fn mean_outcome(x: &[f64; P]) -> f64 {
    OUTCOME[0] + (0..P).map(|j| OUTCOME[j + 1] * x[j]).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: StudyDataset,
    /// The untransformed covariates, row by row.
    pub latent: Vec<[f64; P]>,
}

pub fn generate_from_rng<R: Rng>(n: usize, scenario: Scenario, rng: &mut R) -> Result<SimulatedData> {
    let mut records = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = [0.0; P];
        for xj in x.iter_mut() {
            *xj = rng.sample(StandardNormal);
        }
        let z = rng.random_bool(os_probability(&x)) as u8;
        let t = rng.random_bool(treatment_probability(&x, z)) as u8;
        let eps: f64 = rng.sample(StandardNormal);
        let y = mean_outcome(&x) + eps;
        records.push(UnitRecord::new(z, t, y, scenario.observe(&x)));
        latent.push(x);
    }
    Ok(SimulatedData {
        data: StudyDataset::new(records)?,
        latent,
    })
}

/// `n` records from the data-generating process; `seed` fixes the stream.
pub fn generate_dataset(n: usize, scenario: Scenario, seed: u64) -> Result<StudyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate_from_rng(n, scenario, &mut rng)?.data)
}

/// Generator for stream `stream` of base seed `seed`. Streams are
/// independent, so replication `r` can be rerun on its own.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub n_valid: usize,
    pub replications: usize,
    pub seed: u64,
    /// Reported pointwise.
    pub eval_percentiles: Vec<f64>,
    /// Size of the even grid `i/(k+1)` used for integrated metrics.
    pub integrated_points: usize,
    pub pipeline: PipelineConfig,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, replications: usize, seed: u64) -> Self {
        ScenarioConfig {
            scenario,
            n,
            n_valid: 20_000,
            replications,
            seed,
            eval_percentiles: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            integrated_points: 99,
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 100 || self.n_valid < 100 {
            return Err(Error::InvalidArgument("n and n_valid must be at least 100".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        if self.eval_percentiles.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::InvalidArgument("percentiles must lie in (0, 1)".into()));
        }
        if self.integrated_points == 0 {
            return Err(Error::InvalidArgument("integrated grid must be nonempty".into()));
        }
        if self.pipeline.reduction.dim() != 1 {
            return Err(Error::InvalidArgument("simulation smooths over a scalar V".into()));
        }
        self.pipeline.validate()
    }

    /// Percentile points first, then the integrated grid.
    pub fn grid(&self) -> Result<EvaluationGrid> {
        EvaluationGrid::from_values(self.eval_percentiles.clone())?.union(&EvaluationGrid::even(self.integrated_points)?)
    }
}

/// One estimator at one point in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub estimate: f64,
    pub se_plain: f64,
    pub se_conservative: f64,
}

impl PointResult {
    fn from(e: &CombinedEstimate) -> Self {
        PointResult {
            estimate: e.tau,
            se_plain: e.se_plain,
            se_conservative: e.se_conservative,
        }
    }

    pub fn covers(&self, truth: f64, conservative: bool) -> bool {
        let se = if conservative { self.se_conservative } else { self.se_plain };
        (self.estimate - truth).abs() <= Z_975 * se
    }
}

pub const ESTIMATORS: [&str; 3] = ["trial", "os", "adaptive"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutput {
    pub rep: usize,
    /// Indexed `[estimator][point]` in [`ESTIMATORS`] and grid order.
    pub results: [Vec<PointResult>; 3],
    pub eta: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub grid_len: usize,
    pub risk_curve: Vec<(f64, f64)>,
}

impl ReplicationOutput {
    pub fn lambda_is_smallest(&self) -> bool {
        self.selected_index == 0
    }

    pub fn eta_all_zero(&self) -> bool {
        self.eta.iter().all(|&e| e == 0.0)
    }
}

/// Generates the training and validation sets of replication `rep`, runs the
/// pipeline and collects all three estimators at every grid point.
pub fn run_replication(rep: usize, config: &ScenarioConfig) -> Result<ReplicationOutput> {
    let wrap = |e: Error| Error::Replication {
        rep,
        source: Box::new(e),
    };
    let stream = 2 * rep as u64;
    let train = generate_from_rng(config.n, config.scenario, &mut stream_rng(config.seed, stream)).map_err(wrap)?;
    let valid =
        generate_from_rng(config.n_valid, config.scenario, &mut stream_rng(config.seed, stream + 1)).map_err(wrap)?;
    let grid = config.grid()?;
    let report = estimate(&train.data, &valid.data, &grid, &config.pipeline).map_err(wrap)?;
    let pick = |f: fn(&crate::pipeline::PointEstimates) -> &CombinedEstimate| {
        report.points.iter().map(|p| PointResult::from(f(p))).collect::<Vec<_>>()
    };
    let (selected_lambda, selected_index, grid_len, risk_curve) = match &report.tuning {
        Some(t) => (t.selected_lambda, t.selected_index, t.risk_curve.len(), t.risk_curve.clone()),
        None => (report.lambda, 0, 0, Vec::new()),
    };
    Ok(ReplicationOutput {
        rep,
        results: [pick(|p| &p.trial), pick(|p| &p.os), pick(|p| &p.adaptive)],
        eta: report.points.iter().map(|p| p.adaptive.eta).collect(),
        selected_lambda,
        selected_index,
        grid_len,
        risk_curve,
    })
}

/// Bias, RMSE and coverage for one estimator at one percentile (or
/// integrated, when `percentile` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub percentile: Option<f64>,
    pub estimator: String,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub coverage_conservative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub n: usize,
    pub replications: usize,
    pub failures: Vec<(usize, String)>,
    pub rows: Vec<MetricsRow>,
    /// Share of replications whose tuned `λ` is the smallest grid value.
    pub share_lambda_smallest: f64,
    /// Share of replications with `η̂ = 0` at every evaluation point.
    pub share_eta_all_zero: f64,
}

impl MetricsReport {
    pub fn row(&self, percentile: Option<f64>, estimator: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.percentile == percentile && r.estimator == estimator)
    }

    pub fn integrated(&self, estimator: &str) -> Option<&MetricsRow> {
        self.row(None, estimator)
    }

    /// `scenario,n,percentile,estimator,bias,rmse,coverage,coverage_conservative`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: "metrics.csv".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario",
            "n",
            "percentile",
            "estimator",
            "bias",
            "rmse",
            "coverage",
            "coverage_conservative",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                self.scenario.name().to_string(),
                self.n.to_string(),
                r.percentile.map(|p| p.to_string()).unwrap_or_else(|| "integrated".into()),
                r.estimator.clone(),
                r.bias.to_string(),
                r.rmse.to_string(),
                r.coverage.to_string(),
                r.coverage_conservative.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "metrics.csv".into(),
            message: e.to_string(),
        })
    }

    pub fn write_failures<W: Write>(&self, mut writer: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: "failures.txt".into(),
            message: e.to_string(),
        };
        writeln!(writer, "failed {} of {}", self.failures.len(), self.replications + self.failures.len()).map_err(io)?;
        for (rep, msg) in &self.failures {
            writeln!(writer, "rep {rep}: {msg}").map_err(io)?;
        }
        Ok(())
    }
}

fn cell(values: impl Iterator<Item = PointResult> + Clone, truth: f64) -> (f64, f64, f64, f64) {
    let mut k = 0usize;
    let (mut s, mut s2, mut cov, mut cov_c) = (0.0, 0.0, 0usize, 0usize);
    for r in values {
        let e = r.estimate - truth;
        s += e;
        s2 += e * e;
        cov += r.covers(truth, false) as usize;
        cov_c += r.covers(truth, true) as usize;
        k += 1;
    }
    let k = k as f64;
    (s / k, (s2 / k).sqrt(), cov as f64 / k, cov_c as f64 / k)
}

/// Metrics against a true CATE of zero.
pub fn aggregate_metrics(
    config: &ScenarioConfig,
    outputs: &[ReplicationOutput],
    failures: Vec<(usize, String)>,
) -> Result<MetricsReport> {
    if outputs.is_empty() {
        return Err(Error::Simulation("no successful replications".into()));
    }
    let n_pct = config.eval_percentiles.len();
    let n_int = config.integrated_points;
    let mut rows = Vec::new();
    for (j, &p) in config.eval_percentiles.iter().enumerate() {
        for (e, name) in ESTIMATORS.iter().enumerate() {
            let (bias, rmse, coverage, coverage_conservative) = cell(outputs.iter().map(|o| o.results[e][j]), 0.0);
            rows.push(MetricsRow {
                percentile: Some(p),
                estimator: name.to_string(),
                bias,
                rmse,
                coverage,
                coverage_conservative,
            });
        }
    }
    for (e, name) in ESTIMATORS.iter().enumerate() {
        let (bias, rmse, coverage, coverage_conservative) = cell(
            outputs
                .iter()
                .flat_map(|o| o.results[e][n_pct..n_pct + n_int].iter().copied()),
            0.0,
        );
        rows.push(MetricsRow {
            percentile: None,
            estimator: name.to_string(),
            bias,
            rmse,
            coverage,
            coverage_conservative,
        });
    }
    let r = outputs.len() as f64;
    Ok(MetricsReport {
        scenario: config.scenario,
        n: config.n,
        replications: outputs.len(),
        failures,
        rows,
        share_lambda_smallest: outputs.iter().filter(|o| o.lambda_is_smallest()).count() as f64 / r,
        share_eta_all_zero: outputs.iter().filter(|o| o.eta_all_zero()).count() as f64 / r,
    })
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub config: ScenarioConfig,
    pub replications: Vec<ReplicationOutput>,
    pub metrics: MetricsReport,
}

impl SimulationOutput {
    /// `rep,percentile,estimator,estimate,se_plain,se_conservative,eta,lambda`
    /// at the reported percentiles.
    pub fn write_per_rep<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: "per_rep.csv".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "rep",
            "percentile",
            "estimator",
            "estimate",
            "se_plain",
            "se_conservative",
            "eta",
            "lambda",
        ])
        .map_err(io)?;
        for o in &self.replications {
            for (j, p) in self.config.eval_percentiles.iter().enumerate() {
                for (e, name) in ESTIMATORS.iter().enumerate() {
                    let r = o.results[e][j];
                    w.write_record([
                        o.rep.to_string(),
                        p.to_string(),
                        name.to_string(),
                        r.estimate.to_string(),
                        r.se_plain.to_string(),
                        r.se_conservative.to_string(),
                        o.eta[j].to_string(),
                        o.selected_lambda.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "per_rep.csv".into(),
            message: e.to_string(),
        })
    }

    /// `rep,index,lambda,risk,selected`.
    pub fn write_risk_curves<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: "risk_curve.csv".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "index", "lambda", "risk", "selected"]).map_err(io)?;
        for o in &self.replications {
            for (i, (l, r)) in o.risk_curve.iter().enumerate() {
                w.write_record([
                    o.rep.to_string(),
                    i.to_string(),
                    l.to_string(),
                    r.to_string(),
                    ((i == o.selected_index) as u8).to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "risk_curve.csv".into(),
            message: e.to_string(),
        })
    }
}

/// Runs all replications in parallel. Failed replications are excluded from
/// the metrics and listed; more than 5% failures fails the run.
pub fn run_simulation(config: &ScenarioConfig) -> Result<SimulationOutput> {
    config.validate()?;
    let results: Vec<Result<ReplicationOutput>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(rep, config))
        .collect();
    let mut outputs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => {
                log::warn!("{e}");
                failures.push((rep, e.to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.replications as f64 {
        return Err(Error::Simulation(format!(
            "{} of {} replications failed; first: {}",
            failures.len(),
            config.replications,
            failures[0].1
        )));
    }
    let metrics = aggregate_metrics(config, &outputs, failures)?;
    Ok(SimulationOutput {
        config: config.clone(),
        replications: outputs,
        metrics,
    })
}
