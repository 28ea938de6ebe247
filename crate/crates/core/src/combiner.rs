//! Data-adaptive weighting of the trial and OS estimators at one point.
//!
//! With `a = ξ̂ʳ` and `b = ξ̂ʳ - ξ̂ᵒ`, the unpenalized weight is
//! `η̂ᵒ = Σab / Σb²`. The lasso shrinks it towards zero at a rate set by the
//! squared estimated bias `Δ̂² = (τ̂ʳ - τ̂ᵒ)²`; the ridge divides by an
//! inflated denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{InfluenceMoments, PointSummary};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Lasso,
    Ridge,
    Unpenalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeVariant {
    #[default]
    Plain,
    Conservative,
}

/// Scale on which the lasso penalty acts.
///
/// `Normalized` soft-thresholds `η̂ᵒ` at `λΔ̂²`, so `η̂ = 0` exactly when
/// `λ ≥ |η̂ᵒ|/Δ̂²`; the λ grid is built on this scale. `Raw` thresholds the
/// unnormalized cross moment `Σab` at `λΔ̂²/2` and divides by `Σb²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LassoScale {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerConfig {
    pub method: Method,
    pub lambda: f64,
    /// Ridge exponent `β` in `n^{2(1-β)}`.
    pub beta: f64,
    pub se_variant: SeVariant,
    pub lasso_scale: LassoScale,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        CombinerConfig {
            method: Method::Lasso,
            lambda: 0.0,
            beta: 0.25,
            se_variant: SeVariant::Plain,
            lasso_scale: LassoScale::Normalized,
        }
    }
}

impl CombinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(Error::InvalidArgument(format!("beta = {} must lie in (0, 0.5)", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub eta: f64,
    /// Set when `Σb² = 0` (trial and OS influence functions coincide).
    pub degenerate: bool,
}

impl WeightEstimate {
    fn degenerate() -> Self {
        WeightEstimate {
            eta: 0.0,
            degenerate: true,
        }
    }

    fn value(eta: f64) -> Self {
        WeightEstimate { eta, degenerate: false }
    }
}

fn soft_threshold(x: f64, c: f64) -> f64 {
    if x.abs() <= c {
        0.0
    } else {
        x.signum() * (x.abs() - c)
    }
}

/// `η̂ᵒ = Σab / Σb²`.
pub fn eta_unpenalized(m: &InfluenceMoments) -> WeightEstimate {
    let b = m.gram();
    if !(b > 0.0) {
        return WeightEstimate::degenerate();
    }
    WeightEstimate::value(m.cross() / b)
}

/// Penalty level at which the normalized lasso first returns zero:
/// `η̂ᵒ / Δ̂²`. The λ grid and the lasso itself both go through here.
pub fn shrinkage_ratio(eta_o: f64, bias: f64) -> f64 {
    eta_o / (bias * bias)
}

/// Lasso on the raw scale: `sign(Σab) max(|Σab| - λΔ̂²/2, 0) / Σb²`.
pub fn eta_lasso_raw(m: &InfluenceMoments, bias: f64, lambda: f64) -> WeightEstimate {
    let b = m.gram();
    if !(b > 0.0) {
        return WeightEstimate::degenerate();
    }
    WeightEstimate::value(soft_threshold(m.cross(), 0.5 * lambda * bias * bias) / b)
}

/// Lasso on the normalized scale: `sign(η̂ᵒ) max(|η̂ᵒ| - λΔ̂², 0)`.
pub fn eta_lasso(m: &InfluenceMoments, bias: f64, lambda: f64) -> WeightEstimate {
    let w = eta_unpenalized(m);
    if w.degenerate {
        return w;
    }
    if bias != 0.0 && lambda >= shrinkage_ratio(w.eta, bias).abs() {
        return WeightEstimate::value(0.0);
    }
    WeightEstimate::value(soft_threshold(w.eta, lambda * bias * bias))
}

/// Ridge: `Σab / (Σb² + n^{2(1-β)} h^{2d} Δ̂²)`, with `h_d = h^d`.
pub fn eta_ridge(m: &InfluenceMoments, bias: f64, n: usize, h_d: f64, beta: f64) -> WeightEstimate {
    let penalty = (n as f64).powf(2.0 * (1.0 - beta)) * h_d * h_d * bias * bias;
    let denom = m.gram() + penalty;
    if !(denom > 0.0) {
        return WeightEstimate::degenerate();
    }
    WeightEstimate::value(m.cross() / denom)
}

pub fn estimate_weight(point: &PointSummary, config: &CombinerConfig, n: usize, h_d: f64) -> WeightEstimate {
    let m = &point.moments;
    let bias = point.bias();
    match config.method {
        Method::Unpenalized => eta_unpenalized(m),
        Method::Ridge => eta_ridge(m, bias, n, h_d, config.beta),
        Method::Lasso => match config.lasso_scale {
            LassoScale::Normalized => eta_lasso(m, bias, config.lambda),
            LassoScale::Raw => eta_lasso_raw(m, bias, config.lambda),
        },
    }
}

/// `τ̂ʳ + η(τ̂ᵒ - τ̂ʳ)`; exactly `τ̂ʳ` at `η = 0`.
pub fn combine_point(tau_r: f64, tau_o: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        tau_r
    } else {
        tau_r + eta * (tau_o - tau_r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub v: Vec<f64>,
    pub tau_r: f64,
    pub tau_o: f64,
    pub eta: f64,
    pub eta_unpenalized: f64,
    pub bias_estimate: f64,
    pub tau: f64,
    pub se_plain: f64,
    pub se_conservative: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub degenerate: bool,
}

/// `(se_plain, se_conservative)` for a fixed weight `eta`:
/// `σ̂² = (nh^d)⁻¹ Σ{ηξ̂ᵒ + (1-η)ξ̂ʳ}²`, `se = √(σ̂²/(nh^d))`, and the
/// conservative variant adds `η²Δ̂²` to `σ̂²`.
pub fn standard_errors(point: &PointSummary, eta: f64, n: usize, h_d: f64) -> (f64, f64) {
    let nh = n as f64 * h_d;
    let sigma2 = point.moments.combined_sq(eta) / nh;
    let bias = point.bias();
    let plain = (sigma2 / nh).sqrt();
    let conservative = ((sigma2 + eta * eta * bias * bias) / nh).sqrt();
    (plain, conservative)
}

fn assemble(point: &PointSummary, w: WeightEstimate, se_variant: SeVariant, n: usize, h_d: f64) -> CombinedEstimate {
    let tau = combine_point(point.tau_r, point.tau_o, w.eta);
    let (se_plain, se_conservative) = standard_errors(point, w.eta, n, h_d);
    let se = match se_variant {
        SeVariant::Plain => se_plain,
        SeVariant::Conservative => se_conservative,
    };
    CombinedEstimate {
        v: point.v.clone(),
        tau_r: point.tau_r,
        tau_o: point.tau_o,
        eta: w.eta,
        eta_unpenalized: eta_unpenalized(&point.moments).eta,
        bias_estimate: point.bias(),
        tau,
        se_plain,
        se_conservative,
        ci_low: tau - Z_975 * se,
        ci_high: tau + Z_975 * se,
        degenerate: w.degenerate,
    }
}

/// Combined estimate at one point. `n` is the training sample size and
/// `h_d = h^d`.
pub fn combine(point: &PointSummary, config: &CombinerConfig, n: usize, h_d: f64) -> Result<CombinedEstimate> {
    config.validate()?;
    let w = estimate_weight(point, config, n, h_d);
    Ok(assemble(point, w, config.se_variant, n, h_d))
}

/// Estimate with a fixed weight: `0` gives the trial-only estimator, `1`
/// the OS-only estimator.
pub fn fixed_weight(point: &PointSummary, eta: f64, se_variant: SeVariant, n: usize, h_d: f64) -> CombinedEstimate {
    assemble(point, WeightEstimate::value(eta), se_variant, n, h_d)
}
