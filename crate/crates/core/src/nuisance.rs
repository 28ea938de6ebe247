//! Parametric working models: propensity `π_t(x, z)`, mean outcome
//! `μ_z(x, t)`, OS participation `ϱ(x)` and the odds `ω(x) = ϱ/(1-ϱ)`.
//!
//! Both fitters work on internally standardized columns and map the
//! coefficients back to the original scale, so fitted predictions do not
//! depend on covariate location or scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{StudyDataset, UnitRecord};
use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-8;
const SCORE_TOLERANCE: f64 = 1e-10;
const JITTER: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 30.0;
const SEPARATION_RIDGE: f64 = 1e-4;
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

/// Which inputs a model sees: the listed covariate columns, then an
/// optional treatment main effect. The intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub covariates: Vec<usize>,
    pub treatment: bool,
}

impl Design {
    pub fn main_effects(p: usize) -> Self {
        Design {
            covariates: (0..p).collect(),
            treatment: false,
        }
    }

    pub fn main_effects_with_treatment(p: usize) -> Self {
        Design {
            covariates: (0..p).collect(),
            treatment: true,
        }
    }

    pub fn intercept_only() -> Self {
        Design {
            covariates: Vec::new(),
            treatment: false,
        }
    }

    pub fn width(&self) -> usize {
        self.covariates.len() + self.treatment as usize
    }

    fn expand(&self, x: &[f64], t: u8) -> Vec<f64> {
        let mut row: Vec<f64> = self.covariates.iter().map(|&j| x[j]).collect();
        if self.treatment {
            row.push(t as f64);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub link: Link,
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub design: Design,
    /// Set when the separation policy refit the model with a ridge penalty.
    #[serde(default)]
    pub separation_warning: bool,
    #[serde(default)]
    pub iterations: usize,
}

impl CoefficientVector {
    fn dot(&self, x: &[f64], t: u8) -> f64 {
        let mut eta = self.intercept;
        for (b, &j) in self.slopes.iter().zip(&self.design.covariates) {
            eta += b * x[j];
        }
        if self.design.treatment {
            eta += self.slopes[self.design.covariates.len()] * t as f64;
        }
        eta
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        match self.design.covariates.iter().max() {
            Some(&m) if m >= p => Err(Error::DimensionMismatch {
                expected: m + 1,
                got: p,
            }),
            _ => Ok(()),
        }
    }

    pub fn linear_predictor(&self, x: &[f64], t: u8) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.dot(x, t))
    }

    /// Inverse-link prediction; logit predictions are clamped.
    pub fn predict_mean(&self, x: &[f64], t: u8) -> Result<f64> {
        let eta = self.linear_predictor(x, t)?;
        Ok(match self.link {
            Link::Identity => eta,
            Link::Logit => clamp_probability(expit(eta)),
        })
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `P(response = 1 | x)` for a logit model without a treatment term.
pub fn predict_probability(model: &CoefficientVector, x: &[f64]) -> Result<f64> {
    if model.link != Link::Logit {
        return Err(Error::InvalidArgument(
            "predict_probability needs a logit-link model".into(),
        ));
    }
    if model.design.treatment {
        return Err(Error::InvalidArgument(
            "predict_probability: model has a treatment term".into(),
        ));
    }
    model.predict_mean(x, 0)
}

/// `ω(x) = ϱ(x) / (1 - ϱ(x))` from the clamped participation probability.
pub fn odds_weight(participation: &CoefficientVector, x: &[f64]) -> Result<f64> {
    let p = predict_probability(participation, x)?;
    Ok(p / (1.0 - p))
}

struct Standardized {
    matrix: DMatrix<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

/// Builds `[1, (x - mean)/sd]`. Constant columns keep scale 1.
fn standardize(rows: &[Vec<f64>]) -> Result<Standardized> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: r.len(),
        });
    }
    let mut means = vec![0.0; k];
    let mut scales = vec![0.0; k];
    for j in 0..k {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        scales[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let matrix = DMatrix::from_fn(n, k + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (rows[i][j - 1] - means[j - 1]) / scales[j - 1]
        }
    });
    Ok(Standardized {
        matrix,
        means,
        scales,
    })
}

fn unstandardize(b: &DVector<f64>, means: &[f64], scales: &[f64]) -> (f64, Vec<f64>) {
    let slopes: Vec<f64> = (0..means.len()).map(|j| b[j + 1] / scales[j]).collect();
    let intercept = b[0] - slopes.iter().zip(means).map(|(s, m)| s * m).sum::<f64>();
    (intercept, slopes)
}

struct IrlsOutcome {
    coef: DVector<f64>,
    iterations: usize,
    separated: bool,
}

fn penalized_loglik(z: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, ridge: f64) -> f64 {
    let eta = z * b;
    let mut ll = 0.0;
    for i in 0..y.len() {
        // log(1 + e^η) computed stably
        let e = eta[i];
        let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        ll += y[i] * e - softplus;
    }
    let pen: f64 = b.iter().skip(1).map(|v| v * v).sum();
    ll - 0.5 * ridge * pen
}

fn irls(z: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<IrlsOutcome> {
    let (n, k) = z.shape();
    let ybar = y.mean().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let mut b = DVector::zeros(k);
    b[0] = (ybar / (1.0 - ybar)).ln();
    let mut trace = Vec::new();
    let mut ll = penalized_loglik(z, y, &b, ridge);

    for iter in 1..=MAX_ITERATIONS {
        let eta = z * &b;
        let p = eta.map(expit);
        let w = p.map(|v| (v * (1.0 - v)).max(1e-300));

        let mut score = z.tr_mul(&(y - &p));
        for j in 1..k {
            score[j] -= ridge * b[j];
        }
        if score.norm() < SCORE_TOLERANCE {
            return Ok(IrlsOutcome {
                coef: b,
                iterations: iter - 1,
                separated: false,
            });
        }

        let mut zw = z.clone();
        for i in 0..n {
            zw.row_mut(i).scale_mut(w[i]);
        }
        let mut h = z.tr_mul(&zw);
        for j in 0..k {
            h[(j, j)] += JITTER + if j > 0 { ridge } else { 0.0 };
        }
        let chol = h.cholesky().ok_or(Error::RankDeficient { column: 0 })?;
        let step = chol.solve(&score);

        // Step halving keeps the penalized likelihood from decreasing.
        let mut scale = 1.0;
        let mut candidate = &b + &step;
        let mut cand_ll = penalized_loglik(z, y, &candidate, ridge);
        let mut halvings = 0;
        while !(cand_ll >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < 30 {
            scale *= 0.5;
            candidate = &b + &step * scale;
            cand_ll = penalized_loglik(z, y, &candidate, ridge);
            halvings += 1;
        }
        let change = (&step * scale).amax();
        trace.push(change);
        b = candidate;
        ll = cand_ll;

        if ridge == 0.0 && b.iter().any(|v| v.abs() > SEPARATION_BOUND) {
            return Ok(IrlsOutcome {
                coef: b,
                iterations: iter,
                separated: true,
            });
        }
        if change < STEP_TOLERANCE {
            return Ok(IrlsOutcome {
                coef: b,
                iterations: iter,
                separated: false,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        last_change: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}

/// Logistic regression by IRLS on design rows (intercept added).
///
/// If a standardized coefficient leaves `[-30, 30]` the data are treated as
/// (quasi-)separated: the fit restarts with a ridge penalty of `1e-4` per
/// observation on the slopes and `separation_warning` is set.
pub fn fit_logistic(responses: &[f64], rows: &[Vec<f64>]) -> Result<CoefficientVector> {
    if responses.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: responses.len(),
            got: rows.len(),
        });
    }
    if responses.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData("logistic responses must be 0/1".into()));
    }
    let ones = responses.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == responses.len() {
        return Err(Error::InvalidData(
            "logistic fit needs at least one response in each class".into(),
        ));
    }
    let std = standardize(rows)?;
    let y = DVector::from_column_slice(responses);
    let mut out = irls(&std.matrix, &y, 0.0)?;
    let mut warned = false;
    if out.separated {
        log::warn!("near-separation detected; refitting with ridge penalty");
        out = irls(&std.matrix, &y, SEPARATION_RIDGE * responses.len() as f64)?;
        warned = true;
    }
    let (intercept, slopes) = unstandardize(&out.coef, &std.means, &std.scales);
    let width = slopes.len();
    Ok(CoefficientVector {
        link: Link::Logit,
        intercept,
        slopes,
        design: Design::main_effects(width),
        separation_warning: warned,
        iterations: out.iterations,
    })
}

/// Ordinary least squares via Householder QR on standardized columns.
pub fn fit_linear(responses: &[f64], rows: &[Vec<f64>]) -> Result<CoefficientVector> {
    if responses.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: responses.len(),
            got: rows.len(),
        });
    }
    let std = standardize(rows)?;
    let (n, k) = std.matrix.shape();
    if n < k {
        return Err(Error::InvalidData(format!(
            "linear fit needs at least {k} rows, got {n}"
        )));
    }
    let qr = std.matrix.qr();
    let r = qr.r();
    let mut qty = DVector::from_column_slice(responses);
    qr.q_tr_mul(&mut qty);

    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let mut b = DVector::zeros(k);
    for j in (0..k).rev() {
        let d = r[(j, j)];
        if d.abs() <= RANK_TOLERANCE * max_diag {
            return Err(Error::RankDeficient { column: j });
        }
        let mut acc = qty[j];
        for l in j + 1..k {
            acc -= r[(j, l)] * b[l];
        }
        b[j] = acc / d;
    }
    let (intercept, slopes) = unstandardize(&b, &std.means, &std.scales);
    let width = slopes.len();
    Ok(CoefficientVector {
        link: Link::Identity,
        intercept,
        slopes,
        design: Design::main_effects(width),
        separation_warning: false,
        iterations: 0,
    })
}

fn fit_design<'a>(
    records: impl Iterator<Item = &'a UnitRecord>,
    design: Design,
    link: Link,
    response: impl Fn(&UnitRecord) -> f64,
) -> Result<CoefficientVector> {
    let mut ys = Vec::new();
    let mut rows = Vec::new();
    for r in records {
        ys.push(response(r));
        rows.push(design.expand(&r.x, r.t));
    }
    if ys.is_empty() {
        return Err(Error::InvalidData("no records in stratum".into()));
    }
    let mut fit = match link {
        Link::Logit => fit_logistic(&ys, &rows)?,
        Link::Identity => fit_linear(&ys, &rows)?,
    };
    fit.design = design;
    Ok(fit)
}

/// Covariate terms of one working model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    /// All covariates as main effects.
    Main,
    /// Intercept only (the outcome model then also drops `T`).
    InterceptOnly,
}

/// Outcome model layout: `Y ~ X + T` in each study, or `Y ~ X` per arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeForm {
    Pooled,
    PerArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub outcome_link: Link,
    pub outcome_form: OutcomeForm,
    pub ps_trial: Terms,
    pub ps_os: Terms,
    pub outcome_trial: Terms,
    pub outcome_os: Terms,
    pub participation: Terms,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            outcome_link: Link::Identity,
            outcome_form: OutcomeForm::Pooled,
            ps_trial: Terms::Main,
            ps_os: Terms::Main,
            outcome_trial: Terms::Main,
            outcome_os: Terms::Main,
            participation: Terms::Main,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum OutcomeModel {
    Pooled {
        model: CoefficientVector,
    },
    PerArm {
        treated: CoefficientVector,
        control: CoefficientVector,
    },
}

impl OutcomeModel {
    /// `μ(x, t)` on the response scale.
    pub fn predict(&self, x: &[f64], t: u8) -> Result<f64> {
        match self {
            OutcomeModel::Pooled { model } => model.predict_mean(x, t),
            OutcomeModel::PerArm { treated, control } => {
                if t == 1 {
                    treated.predict_mean(x, 1)
                } else {
                    control.predict_mean(x, 0)
                }
            }
        }
    }

    fn models(&self) -> Vec<(&'static str, &CoefficientVector)> {
        match self {
            OutcomeModel::Pooled { model } => vec![("", model)],
            OutcomeModel::PerArm { treated, control } => {
                vec![("_treated", treated), ("_control", control)]
            }
        }
    }
}

fn fit_outcome(
    data: &StudyDataset,
    z: u8,
    terms: Terms,
    config: &NuisanceConfig,
) -> Result<OutcomeModel> {
    let p = data.p();
    let link = config.outcome_link;
    let y = |r: &UnitRecord| r.y;
    match (config.outcome_form, terms) {
        (OutcomeForm::Pooled, Terms::Main) => Ok(OutcomeModel::Pooled {
            model: fit_design(data.study(z), Design::main_effects_with_treatment(p), link, y)?,
        }),
        (OutcomeForm::Pooled, Terms::InterceptOnly) => Ok(OutcomeModel::Pooled {
            model: fit_design(data.study(z), Design::intercept_only(), link, y)?,
        }),
        (OutcomeForm::PerArm, terms) => {
            let design = match terms {
                Terms::Main => Design::main_effects(p),
                Terms::InterceptOnly => Design::intercept_only(),
            };
            let arm = |t: u8| {
                fit_design(
                    data.study(z).filter(move |r| r.t == t),
                    design.clone(),
                    link,
                    y,
                )
            };
            Ok(OutcomeModel::PerArm {
                treated: arm(1)?,
                control: arm(0)?,
            })
        }
    }
}

fn terms_design(terms: Terms, p: usize) -> Design {
    match terms {
        Terms::Main => Design::main_effects(p),
        Terms::InterceptOnly => Design::intercept_only(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNuisances {
    pub ps_trial: CoefficientVector,
    pub ps_os: CoefficientVector,
    pub outcome_trial: OutcomeModel,
    pub outcome_os: OutcomeModel,
    pub participation: CoefficientVector,
}

impl FittedNuisances {
    /// `π̂_1(x, z)`.
    pub fn propensity(&self, x: &[f64], z: u8) -> Result<f64> {
        let model = if z == 0 { &self.ps_trial } else { &self.ps_os };
        predict_probability(model, x)
    }

    /// `μ̂_z(x, t)`.
    pub fn outcome(&self, x: &[f64], z: u8, t: u8) -> Result<f64> {
        let model = if z == 0 {
            &self.outcome_trial
        } else {
            &self.outcome_os
        };
        model.predict(x, t)
    }

    pub fn odds(&self, x: &[f64]) -> Result<f64> {
        odds_weight(&self.participation, x)
    }

    pub fn any_separation_warning(&self) -> bool {
        self.all_models().iter().any(|(_, m)| m.separation_warning)
    }

    fn all_models(&self) -> Vec<(String, &CoefficientVector)> {
        let mut out = vec![
            ("ps_trial".to_string(), &self.ps_trial),
            ("ps_os".to_string(), &self.ps_os),
        ];
        for (suffix, m) in self.outcome_trial.models() {
            out.push((format!("outcome_trial{suffix}"), m));
        }
        for (suffix, m) in self.outcome_os.models() {
            out.push((format!("outcome_os{suffix}"), m));
        }
        out.push(("participation".to_string(), &self.participation));
        out
    }

    /// `{model name: {link, intercept, slopes}}`.
    pub fn coefficients_json(&self) -> serde_json::Value {
        let map = self
            .all_models()
            .into_iter()
            .map(|(name, m)| {
                (
                    name,
                    serde_json::json!({
                        "link": m.link,
                        "intercept": m.intercept,
                        "slopes": m.slopes,
                    }),
                )
            })
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }
}

/// Fits the five working models: propensity `T ~ X` and outcome per study,
/// participation `Z ~ X` on the pooled data.
pub fn fit_all_nuisances(train: &StudyDataset, config: &NuisanceConfig) -> Result<FittedNuisances> {
    if train.n_trial() == 0 || train.n_os() == 0 {
        return Err(Error::InvalidData(
            "participation model needs both studies".into(),
        ));
    }
    let p = train.p();
    let treat = |r: &UnitRecord| r.t as f64;
    let ps_trial = fit_design(train.study(0), terms_design(config.ps_trial, p), Link::Logit, treat)
        .map_err(|e| e.in_model("ps_trial"))?;
    let ps_os = fit_design(train.study(1), terms_design(config.ps_os, p), Link::Logit, treat)
        .map_err(|e| e.in_model("ps_os"))?;
    let outcome_trial = fit_outcome(train, 0, config.outcome_trial, config)
        .map_err(|e| e.in_model("outcome_trial"))?;
    let outcome_os =
        fit_outcome(train, 1, config.outcome_os, config).map_err(|e| e.in_model("outcome_os"))?;
    let participation = fit_design(
        train.records().iter(),
        terms_design(config.participation, p),
        Link::Logit,
        |r| r.z as f64,
    )
    .map_err(|e| e.in_model("participation"))?;
    Ok(FittedNuisances {
        ps_trial,
        ps_os,
        outcome_trial,
        outcome_os,
        participation,
    })
}

/// Score `μ̂(x, 1) - μ̂(x, 0)` from separate `Y ~ X` fits in each treatment
/// arm of the pooled data. Used to smooth over a predicted treatment
/// difference rather than a raw covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDifferenceScore {
    pub treated: CoefficientVector,
    pub control: CoefficientVector,
}

impl TreatmentDifferenceScore {
    pub fn fit(data: &StudyDataset, link: Link) -> Result<Self> {
        let design = Design::main_effects(data.p());
        let arm = |t: u8| {
            fit_design(
                data.records().iter().filter(move |r| r.t == t),
                design.clone(),
                link,
                |r| r.y,
            )
        };
        Ok(TreatmentDifferenceScore {
            treated: arm(1).map_err(|e| e.in_model("score_treated"))?,
            control: arm(0).map_err(|e| e.in_model("score_control"))?,
        })
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.treated.predict_mean(x, 1)? - self.control.predict_mean(x, 0)?)
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        self.treated.check_dim(p)?;
        self.control.check_dim(p)
    }
}
