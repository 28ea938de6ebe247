//! Choice of the lasso penalty `λ`.
//!
//! Candidates are log-spaced up to `λ_max = min_v η̂ᵒ_v/Δ̂_v²`, plus
//! `λ_max⁺ = max_v η̂ᵒ_v/Δ̂_v²`. Each is scored by the out-of-sample
//! criterion
//!
//! ```text
//! R(λ) = Σ_{i ∈ valid} {τ̂(V_i; λ) - τ̂ʳ_valid(V_i)}²
//! ```
//!
//! where `τ̂(·; λ)` is fitted on the training part and `τ̂ʳ_valid` is the
//! trial-only estimator fitted on the validation part.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{combine_point, eta_lasso, eta_lasso_raw, eta_unpenalized, shrinkage_ratio, LassoScale};
use crate::data::StudyDataset;
use crate::error::{Error, Result};
use crate::kernel::{lattice_index, PointSummary};
use crate::pipeline::{FittedPipeline, PipelineConfig};

/// Fraction of validation points allowed to fall outside the support.
pub const MAX_DROPPED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    /// Strictly increasing.
    pub values: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_max_plus: f64,
    pub epsilon: f64,
    pub grid_size: usize,
    /// Some ratio was negative and absolute values were used.
    pub used_absolute: bool,
    /// No usable ratio (every bias or every `η̂ᵒ` zero); the grid is `{0}`.
    pub degenerate: bool,
}

/// Builds the grid from `(η̂ᵒ_v, Δ̂_v)` pairs over the evaluation points.
/// Points with zero bias carry no penalty information and are skipped, as
/// are zero ratios (the lasso is zero there for every `λ`).
pub fn build_lambda_grid(per_point: &[(f64, f64)], epsilon: f64, grid_size: usize) -> Result<LambdaGrid> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} not in (0, 1)")));
    }
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid size must be at least 1".into()));
    }
    let mut ratios: Vec<f64> = per_point
        .iter()
        .filter(|(eta, bias)| *bias != 0.0 && eta.is_finite() && bias.is_finite())
        .map(|&(eta, bias)| shrinkage_ratio(eta, bias))
        .collect();
    let used_absolute = ratios.iter().any(|r| *r < 0.0);
    if used_absolute {
        log::warn!("negative unpenalized weights in the lambda grid; using absolute ratios");
        ratios.iter_mut().for_each(|r| *r = r.abs());
    }
    ratios.retain(|r| *r > 0.0 && r.is_finite());
    if ratios.is_empty() {
        return Ok(LambdaGrid {
            values: vec![0.0],
            lambda_max: 0.0,
            lambda_max_plus: 0.0,
            epsilon,
            grid_size,
            used_absolute,
            degenerate: true,
        });
    }
    let lambda_max = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_max_plus = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = epsilon * lambda_max;
    let mut values: Vec<f64> = if grid_size == 1 {
        vec![lambda_max]
    } else {
        (0..grid_size)
            .map(|k| {
                if k + 1 == grid_size {
                    lambda_max
                } else {
                    lo * (1.0 / epsilon).powf(k as f64 / (grid_size - 1) as f64)
                }
            })
            .collect()
    };
    if lambda_max_plus > lambda_max {
        values.push(lambda_max_plus);
    }
    values.dedup();
    Ok(LambdaGrid {
        values,
        lambda_max,
        lambda_max_plus,
        epsilon,
        grid_size,
        used_absolute,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub selected_lambda: f64,
    pub selected_index: usize,
    /// `(λ, R(λ))` in grid order.
    pub risk_curve: Vec<(f64, f64)>,
    /// Validation points used in the risk.
    pub evaluated: usize,
    /// Validation points skipped for lack of support.
    pub dropped: usize,
}

impl TuningResult {
    pub fn write_risk_curve<W: Write>(&self, writer: W) -> Result<()> {
        write_risk_curve(&self.risk_curve, writer)
    }
}

pub fn write_risk_curve<W: Write>(curve: &[(f64, f64)], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: "risk_curve.csv".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "risk"]).map_err(io)?;
    for (l, r) in curve {
        w.write_record([l.to_string(), r.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "risk_curve.csv".into(),
        message: e.to_string(),
    })
}

/// Index of the smallest risk; ties go to the earliest (smallest `λ`).
pub fn argmin_first(risks: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in risks.iter().enumerate() {
        match best {
            Some(b) if *r >= risks[b] => {}
            _ if r.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone)]
struct ValidationPoint {
    summary: PointSummary,
    target: f64,
}

/// Training summaries and validation trial estimates at every validation
/// record's `V`, computed once and reused across `λ`.
#[derive(Debug, Clone)]
pub struct ValidationContext {
    points: Vec<ValidationPoint>,
    dropped: usize,
    scale: LassoScale,
}

impl ValidationContext {
    pub fn new(train: &FittedPipeline, valid: &FittedPipeline, scale: LassoScale) -> Result<Self> {
        let panel = valid.smoother().panel();
        let total = panel.len();
        let m = valid.reference_size();
        let lattice = if train.reference_size() == m {
            train.smoother().lattice(m).zip(valid.smoother().lattice(m))
        } else {
            None
        };
        let results: Vec<Result<Option<ValidationPoint>>> = (0..total)
            .into_par_iter()
            .map(|i| {
                let v = panel.v(i);
                let (summary, target) = match &lattice {
                    Some((lt, lv)) => {
                        let c = lattice_index(v[0], m).expect("validation V on lattice");
                        (lt.summary(c), lv.trial_estimate(c))
                    }
                    None => (train.summary(v), valid.trial_estimate(v)),
                };
                let summary = match summary {
                    Ok(s) => s,
                    Err(Error::NoSupport { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                match target {
                    Ok(target) => Ok(Some(ValidationPoint { summary, target })),
                    Err(Error::NoSupport { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut points = Vec::with_capacity(total);
        for r in results {
            if let Some(p) = r? {
                points.push(p);
            }
        }
        let dropped = total - points.len();
        if dropped as f64 > MAX_DROPPED_FRACTION * total as f64 {
            return Err(Error::TooManyDropped { dropped, total });
        }
        if dropped > 0 {
            log::warn!("validation risk skipped {dropped} of {total} points for lack of support");
        }
        Ok(ValidationContext { points, dropped, scale })
    }

    pub fn evaluated(&self) -> usize {
        self.points.len()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// `R(λ)`.
    pub fn risk(&self, lambda: f64) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let s = &p.summary;
                let w = match self.scale {
                    LassoScale::Normalized => eta_lasso(&s.moments, s.bias(), lambda),
                    LassoScale::Raw => eta_lasso_raw(&s.moments, s.bias(), lambda),
                };
                (combine_point(s.tau_r, s.tau_o, w.eta) - p.target).powi(2)
            })
            .sum()
    }

    /// Risk of the unpenalized combination, for diagnostics.
    pub fn risk_unpenalized(&self) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let s = &p.summary;
                let eta = eta_unpenalized(&s.moments).eta;
                (combine_point(s.tau_r, s.tau_o, eta) - p.target).powi(2)
            })
            .sum()
    }
}

/// Scores every grid value and picks the minimizer.
pub fn select_lambda(grid: &LambdaGrid, context: &ValidationContext) -> Result<TuningResult> {
    let risks: Vec<f64> = grid.values.par_iter().map(|&l| context.risk(l)).collect();
    let selected_index =
        argmin_first(&risks).ok_or_else(|| Error::InvalidData("validation risk is undefined".into()))?;
    Ok(TuningResult {
        selected_lambda: grid.values[selected_index],
        selected_index,
        risk_curve: grid.values.iter().cloned().zip(risks).collect(),
        evaluated: context.evaluated(),
        dropped: context.dropped(),
    })
}

/// `R(λ)` from raw training and validation data; `V` is referenced to the
/// validation set.
pub fn validation_risk(lambda: f64, train: &StudyDataset, valid: &StudyDataset, config: &PipelineConfig) -> Result<f64> {
    let t = FittedPipeline::fit(train, valid, config)?;
    let v = FittedPipeline::fit(valid, valid, config)?;
    Ok(ValidationContext::new(&t, &v, config.combiner.lasso_scale)?.risk(lambda))
}
