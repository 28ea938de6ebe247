//! End-to-end estimation: nuisances, pseudo-outcomes and smoothing on the
//! training part, `λ` tuned against the validation part, then trial, OS and
//! adaptive estimates at each evaluation point.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{combine, fixed_weight, CombinedEstimate, CombinerConfig, Method};
use crate::data::{EvaluationGrid, ReductionSpec, StudyDataset};
use crate::error::{Error, Result};
use crate::kernel::{BaseEstimate, KernelConfig, KernelSmoother, PointSummary};
use crate::nuisance::{fit_all_nuisances, FittedNuisances, NuisanceConfig};
use crate::pseudo::{compute_pseudo_outcomes, PseudoOutcomePanel};
use crate::tuning::{build_lambda_grid, select_lambda, LambdaGrid, TuningResult, ValidationContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Target population: 0 for the trial, 1 for the OS.
    pub target_z: u8,
    pub reduction: ReductionSpec,
    pub nuisance: NuisanceConfig,
    pub kernel: KernelConfig,
    /// `λ` in here is used as-is unless the method is lasso, in which case
    /// it is replaced by the tuned value.
    pub combiner: CombinerConfig,
    pub epsilon: f64,
    pub grid_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_z: 1,
            reduction: ReductionSpec::PercentileOfColumn { index: 0 },
            nuisance: NuisanceConfig::default(),
            kernel: KernelConfig::default(),
            combiner: CombinerConfig::default(),
            epsilon: 1e-3,
            grid_size: 25,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_z > 1 {
            return Err(Error::InvalidArgument(format!("target z = {} not in {{0,1}}", self.target_z)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon = {} not in (0, 1)", self.epsilon)));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidArgument("grid size must be at least 1".into()));
        }
        self.combiner.validate()
    }
}

/// Nuisances and smoother fitted on one dataset.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    nuisances: FittedNuisances,
    smoother: KernelSmoother,
    reference_n: usize,
}

impl FittedPipeline {
    /// Fits on `data`; percentile reductions use the ECDF of `reference`.
    pub fn fit(data: &StudyDataset, reference: &StudyDataset, config: &PipelineConfig) -> Result<Self> {
        let nuisances = fit_all_nuisances(data, &config.nuisance)?;
        let panel = compute_pseudo_outcomes(data, &nuisances, &config.reduction, reference)?;
        let smoother = KernelSmoother::from_config(panel, config.target_z, &config.kernel)?;
        Ok(FittedPipeline {
            nuisances,
            smoother,
            reference_n: reference.n(),
        })
    }

    pub fn nuisances(&self) -> &FittedNuisances {
        &self.nuisances
    }

    pub fn smoother(&self) -> &KernelSmoother {
        &self.smoother
    }

    pub fn panel(&self) -> &PseudoOutcomePanel {
        self.smoother.panel()
    }

    pub fn n(&self) -> usize {
        self.smoother.n()
    }

    /// Size of the reference set behind percentile reductions.
    pub fn reference_size(&self) -> usize {
        self.reference_n
    }

    pub fn h_d(&self) -> f64 {
        self.smoother.h_d()
    }

    pub fn bandwidth(&self) -> &[f64] {
        self.smoother.bandwidth()
    }

    pub fn summary(&self, v: &[f64]) -> Result<PointSummary> {
        self.smoother.summary(v)
    }

    pub fn base_estimate(&self, v: &[f64]) -> Result<BaseEstimate> {
        self.smoother.estimate(v)
    }

    pub fn trial_estimate(&self, v: &[f64]) -> Result<f64> {
        self.smoother.trial_estimate(v)
    }
}

/// Trial-only, OS-only and adaptive results at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub trial: CombinedEstimate,
    pub os: CombinedEstimate,
    pub adaptive: CombinedEstimate,
}

impl PointEstimates {
    pub fn v(&self) -> &[f64] {
        &self.adaptive.v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationReport {
    pub config: PipelineConfig,
    pub n_train: usize,
    pub n_valid: usize,
    pub bandwidth: Vec<f64>,
    /// Penalty used for the adaptive estimates.
    pub lambda: f64,
    pub lambda_grid: Option<LambdaGrid>,
    pub tuning: Option<TuningResult>,
    pub points: Vec<PointEstimates>,
    pub nuisances: FittedNuisances,
    pub separation_warning: bool,
}

/// Runs the pipeline on a train/validation split and evaluates at every
/// grid point. Percentile reductions are referenced to `valid`.
pub fn estimate(
    train: &StudyDataset,
    valid: &StudyDataset,
    grid: &EvaluationGrid,
    config: &PipelineConfig,
) -> Result<EstimationReport> {
    config.validate()?;
    if grid.dim() != config.reduction.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.reduction.dim(),
            got: grid.dim(),
        });
    }
    let fitted = FittedPipeline::fit(train, valid, config)?;
    let summaries = grid
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|v| fitted.summary(v))
        .collect::<Result<Vec<_>>>()?;

    let mut combiner = config.combiner;
    let (lambda_grid, tuning) = if combiner.method == Method::Lasso {
        let per_point: Vec<(f64, f64)> = summaries
            .iter()
            .map(|s| (crate::combiner::eta_unpenalized(&s.moments).eta, s.bias()))
            .collect();
        let lambda_grid = build_lambda_grid(&per_point, config.epsilon, config.grid_size)?;
        let valid_fit = FittedPipeline::fit(valid, valid, config).map_err(|e| validation_error(e))?;
        let context = ValidationContext::new(&fitted, &valid_fit, combiner.lasso_scale)?;
        let tuning = select_lambda(&lambda_grid, &context)?;
        combiner.lambda = tuning.selected_lambda;
        (Some(lambda_grid), Some(tuning))
    } else {
        (None, None)
    };

    let n = fitted.n();
    let h_d = fitted.h_d();
    let points = summaries
        .iter()
        .map(|s| {
            Ok(PointEstimates {
                trial: fixed_weight(s, 0.0, combiner.se_variant, n, h_d),
                os: fixed_weight(s, 1.0, combiner.se_variant, n, h_d),
                adaptive: combine(s, &combiner, n, h_d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EstimationReport {
        config: config.clone(),
        n_train: train.n(),
        n_valid: valid.n(),
        bandwidth: fitted.bandwidth().to_vec(),
        lambda: combiner.lambda,
        lambda_grid,
        tuning,
        points,
        separation_warning: fitted.nuisances().any_separation_warning(),
        nuisances: fitted.nuisances.clone(),
    })
}

fn validation_error(e: Error) -> Error {
    match e {
        Error::Model { model, source } => Error::Model {
            model,
            source: Box::new(Error::InvalidData(format!("validation fit: {source}"))),
        },
        other => other,
    }
}

fn csv_io(name: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::Io {
        path: name.into(),
        message: e.to_string(),
    }
}

fn v_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["v".into()]
    } else {
        (1..=d).map(|j| format!("v{j}")).collect()
    }
}

impl EstimationReport {
    pub fn dim(&self) -> usize {
        self.config.reduction.dim()
    }

    /// One row per point and estimator (`trial`, `os`, `adaptive`).
    pub fn write_estimates<W: Write>(&self, writer: W) -> Result<()> {
        let io = csv_io("estimates.csv");
        let mut w = csv::Writer::from_writer(writer);
        let mut header = v_header(self.dim());
        header.extend(
            [
                "estimator",
                "tau",
                "se_plain",
                "se_conservative",
                "ci_low",
                "ci_high",
                "eta",
                "tau_r",
                "tau_o",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(&io)?;
        for p in &self.points {
            for (name, e) in [("trial", &p.trial), ("os", &p.os), ("adaptive", &p.adaptive)] {
                let mut row: Vec<String> = e.v.iter().map(|x| x.to_string()).collect();
                row.push(name.into());
                row.extend(
                    [e.tau, e.se_plain, e.se_conservative, e.ci_low, e.ci_high, e.eta, e.tau_r, e.tau_o]
                        .map(|x| x.to_string()),
                );
                w.write_record(&row).map_err(&io)?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "estimates.csv".into(),
            message: e.to_string(),
        })
    }

    /// `v, eta, eta_unpenalized, bias_estimate`.
    pub fn write_weights<W: Write>(&self, writer: W) -> Result<()> {
        let io = csv_io("weights.csv");
        let mut w = csv::Writer::from_writer(writer);
        let mut header = v_header(self.dim());
        header.extend(["eta", "eta_unpenalized", "bias_estimate"].map(String::from));
        w.write_record(&header).map_err(&io)?;
        for p in &self.points {
            let e = &p.adaptive;
            let mut row: Vec<String> = e.v.iter().map(|x| x.to_string()).collect();
            row.extend([e.eta, e.eta_unpenalized, e.bias_estimate].map(|x| x.to_string()));
            w.write_record(&row).map_err(&io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "weights.csv".into(),
            message: e.to_string(),
        })
    }

    /// `lambda, risk`; only a header when no tuning took place.
    pub fn write_risk_curve<W: Write>(&self, writer: W) -> Result<()> {
        let curve = self.tuning.as_ref().map(|t| t.risk_curve.as_slice()).unwrap_or(&[]);
        crate::tuning::write_risk_curve(curve, writer)
    }

    /// Resolved configuration, tuning summary and fitted coefficients.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "n_train": self.n_train,
            "n_valid": self.n_valid,
            "bandwidth": self.bandwidth,
            "lambda": self.lambda,
            "lambda_grid": self.lambda_grid,
            "validation_points_used": self.tuning.as_ref().map(|t| t.evaluated),
            "validation_points_dropped": self.tuning.as_ref().map(|t| t.dropped),
            "separation_warning": self.separation_warning,
            "coefficients": self.nuisances.coefficients_json(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UnitRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> StudyDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let z = (i % 3 != 0) as u8;
                let x: f64 = rng.random_range(-1.0..1.0);
                let t = rng.random_bool(0.5) as u8;
                let y = 1.0 + x + t as f64 * 0.5 + rng.random_range(-0.1..0.1);
                UnitRecord::new(z, t, y, vec![x, rng.random_range(-1.0..1.0)])
            })
            .collect();
        StudyDataset::new(records).unwrap()
    }

    #[test]
    fn end_to_end_on_toy_data() {
        let train = toy(600, 1);
        let valid = toy(900, 2);
        let grid = EvaluationGrid::from_values(vec![0.25, 0.5, 0.75]).unwrap();
        let config = PipelineConfig::default();
        let report = estimate(&train, &valid, &grid, &config).unwrap();
        assert_eq!(report.points.len(), 3);
        let tuning = report.tuning.as_ref().unwrap();
        assert_eq!(tuning.risk_curve.len(), report.lambda_grid.as_ref().unwrap().values.len());
        for p in &report.points {
            for e in [&p.trial, &p.os, &p.adaptive] {
                assert!(e.tau.is_finite());
                assert!(e.ci_low <= e.tau && e.tau <= e.ci_high);
                assert!((e.tau - 0.5).abs() < 0.3);
            }
            assert_eq!(p.trial.tau, p.trial.tau_r);
        }
        let mut buf = Vec::new();
        report.write_estimates(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("v,estimator,tau,se_plain"));
        assert_eq!(text.lines().count(), 1 + 9);
        let json = report.to_json();
        assert!(json["coefficients"]["participation"]["slopes"].is_array());
    }

    #[test]
    fn identical_validation_gives_zero_risk_at_full_shrinkage() {
        let data = toy(900, 3);
        let config = PipelineConfig::default();
        let risk = crate::tuning::validation_risk(1e12, &data, &data, &config).unwrap();
        assert!(risk.abs() < 1e-18);
    }

    #[test]
    fn fixed_methods_skip_tuning() {
        let train = toy(600, 4);
        let valid = toy(600, 5);
        let grid = EvaluationGrid::from_values(vec![0.5]).unwrap();
        let mut config = PipelineConfig::default();
        config.combiner.method = Method::Unpenalized;
        let report = estimate(&train, &valid, &grid, &config).unwrap();
        assert!(report.tuning.is_none());
        let p = &report.points[0];
        assert_eq!(p.adaptive.eta, p.adaptive.eta_unpenalized);
    }
}
