//! Record types, CSV ingestion, train/validation splitting and the
//! covariate reduction `V = g(X)`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{Link, TreatmentDifferenceScore};

/// One subject: study indicator `z` (0 = trial, 1 = OS), treatment `t`,
/// outcome `y` and covariates `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub z: u8,
    pub t: u8,
    pub y: f64,
    pub x: Vec<f64>,
}

impl UnitRecord {
    pub fn new(z: u8, t: u8, y: f64, x: Vec<f64>) -> Self {
        UnitRecord { z, t, y, x }
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.z > 1 {
            return Err(Error::InvalidData(format!("row {row}: z = {} is not 0/1", self.z)));
        }
        if self.t > 1 {
            return Err(Error::InvalidData(format!("row {row}: t = {} is not 0/1", self.t)));
        }
        if !self.y.is_finite() {
            return Err(Error::InvalidData(format!("row {row}: y is not finite")));
        }
        if let Some(j) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {row}: x{} is not finite", j + 1)));
        }
        Ok(())
    }
}

/// The pooled trial + OS sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDataset {
    records: Vec<UnitRecord>,
    p: usize,
}

impl StudyDataset {
    /// Validates every record and that all share one covariate dimension.
    /// Both studies need not be present here; estimators check that later.
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        let p = match records.first() {
            Some(r) => r.x.len(),
            None => return Err(Error::InvalidData("dataset has no records".into())),
        };
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {}: {} covariates, expected {p}",
                    i + 1,
                    r.x.len()
                )));
            }
            r.validate(i + 1)?;
        }
        Ok(StudyDataset { records, p })
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<UnitRecord> {
        self.records
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn n_trial(&self) -> usize {
        self.records.iter().filter(|r| r.z == 0).count()
    }

    pub fn n_os(&self) -> usize {
        self.records.iter().filter(|r| r.z == 1).count()
    }

    pub fn study(&self, z: u8) -> impl Iterator<Item = &UnitRecord> {
        self.records.iter().filter(move |r| r.z == z)
    }

    /// Errors unless both studies contribute at least one record.
    pub fn require_both_studies(&self) -> Result<()> {
        let (n0, n1) = (self.n_trial(), self.n_os());
        if n0 == 0 || n1 == 0 {
            return Err(Error::InvalidData(format!(
                "need both studies, got n0 = {n0}, n1 = {n1}"
            )));
        }
        Ok(())
    }

    pub fn concat(&self, other: &StudyDataset) -> Result<StudyDataset> {
        if self.p != other.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: other.p,
            });
        }
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        Ok(StudyDataset { records, p: self.p })
    }

    pub fn subset(&self, indices: &[usize]) -> StudyDataset {
        StudyDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            p: self.p,
        }
    }
}

/// Column mapping for CSV ingestion. `x = None` picks up every header of
/// the form `x<k>` ordered by `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub z: String,
    pub t: String,
    pub y: String,
    pub x: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            z: "z".into(),
            t: "t".into(),
            y: "y".into(),
            x: None,
        }
    }
}

impl CsvSchema {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<(usize, usize, usize, Vec<(usize, String)>)> {
        let find = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
                row: 0,
                column: name.to_string(),
                message: "missing column".into(),
            })
        };
        let z = find(&self.z)?;
        let t = find(&self.t)?;
        let y = find(&self.y)?;
        let x = match &self.x {
            Some(names) => names
                .iter()
                .map(|n| find(n).map(|i| (i, n.clone())))
                .collect::<Result<Vec<_>>>()?,
            None => {
                let mut cols: Vec<(u64, usize, String)> = headers
                    .iter()
                    .enumerate()
                    .filter_map(|(i, h)| {
                        let h = h.trim();
                        let k = h.strip_prefix('x')?.parse::<u64>().ok()?;
                        Some((k, i, h.to_string()))
                    })
                    .collect();
                cols.sort();
                cols.into_iter().map(|(_, i, h)| (i, h)).collect()
            }
        };
        if x.is_empty() {
            return Err(Error::Parse {
                row: 0,
                column: "x1".into(),
                message: "no covariate columns".into(),
            });
        }
        Ok((z, t, y, x))
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<StudyDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_csv(file, schema)
}

/// Parses pooled trial/OS data. Rows are numbered from 1, excluding the header.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<StudyDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let (zc, tc, yc, xc) = schema.resolve(&headers)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = row.get(idx).map(str::trim).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Parse {
                    row: row_no,
                    column: name.to_string(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: name.to_string(),
                message: format!("non-numeric value '{raw}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    column: name.to_string(),
                    message: format!("non-finite value '{raw}'"),
                });
            }
            Ok(v)
        };
        let binary = |idx: usize, name: &str| -> Result<u8> {
            let v = cell(idx, name)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Parse {
                    row: row_no,
                    column: name.to_string(),
                    message: format!("value {v} outside {{0,1}}"),
                })
            }
        };
        let z = binary(zc, &schema.z)?;
        let t = binary(tc, &schema.t)?;
        let y = cell(yc, &schema.y)?;
        let x = xc
            .iter()
            .map(|(idx, name)| cell(*idx, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(UnitRecord { z, t, y, x });
    }
    if records.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "file has no data rows".into(),
        });
    }
    StudyDataset::new(records)
}

/// Writes the canonical layout `z,t,y,x1..xp`.
pub fn write_csv<W: Write>(data: &StudyDataset, writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["z".to_string(), "t".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(io)?;
    for r in data.records() {
        let mut row = vec![r.z.to_string(), r.t.to_string(), r.y.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}

/// Splits into `(train, valid)`, stratified by study. Each study with `m`
/// records sends `round(fraction·m)` to training, clamped to `[1, m-1]`, so
/// both parts keep both studies. A study with fewer than two records makes
/// the split infeasible and is reported as an error (no resampling).
/// Record order is preserved within each part.
pub fn split_train_validation(
    data: &StudyDataset,
    fraction: f64,
    seed: u64,
) -> Result<(StudyDataset, StudyDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {fraction} not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; data.n()];
    for z in 0..=1u8 {
        let mut idx: Vec<usize> = (0..data.n()).filter(|&i| data.records[i].z == z).collect();
        let m = idx.len();
        if m < 2 {
            return Err(Error::InfeasibleSplit(format!(
                "study z = {z} has {m} record(s); both parts need at least one"
            )));
        }
        let k = ((fraction * m as f64).round() as usize).clamp(1, m - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..data.n()).filter(|&i| in_train[i]).collect();
    let valid: Vec<usize> = (0..data.n()).filter(|&i| !in_train[i]).collect();
    Ok((data.subset(&train), data.subset(&valid)))
}

/// Right-continuous empirical CDF, `F(x) = #{r ≤ x} / m`.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("ECDF reference is empty".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted: values })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&r| r <= x);
        count as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// How covariates are reduced to `V`. Column indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReductionSpec {
    /// The raw covariate column.
    Column { index: usize },
    /// Percentile of a covariate under the reference ECDF.
    PercentileOfColumn { index: usize },
    /// Percentile of a fitted treatment-difference score under the
    /// reference ECDF.
    PercentileOfScore { score: TreatmentDifferenceScore },
    /// Several reductions side by side, giving `d > 1`.
    Stack { parts: Vec<ReductionSpec> },
}

impl ReductionSpec {
    pub fn dim(&self) -> usize {
        match self {
            ReductionSpec::Stack { parts } => parts.iter().map(ReductionSpec::dim).sum(),
            _ => 1,
        }
    }

    /// Fits a treatment-difference score on `data` (per-arm `Y ~ X` models)
    /// and wraps it as a percentile reduction.
    pub fn fit_score(data: &StudyDataset, link: Link) -> Result<ReductionSpec> {
        Ok(ReductionSpec::PercentileOfScore {
            score: TreatmentDifferenceScore::fit(data, link)?,
        })
    }

    fn check(&self, p: usize) -> Result<()> {
        match self {
            ReductionSpec::Column { index } | ReductionSpec::PercentileOfColumn { index } => {
                if *index >= p {
                    return Err(Error::InvalidArgument(format!(
                        "reduction column {index} out of range for p = {p}"
                    )));
                }
                Ok(())
            }
            ReductionSpec::PercentileOfScore { score } => score.check_dim(p),
            ReductionSpec::Stack { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidArgument("empty stacked reduction".into()));
                }
                parts.iter().try_for_each(|s| s.check(p))
            }
        }
    }
}

/// Maps each record of `data` to `V`, row-major with `spec.dim()` values per
/// record. Percentile kinds use the ECDF of `reference`.
pub fn apply_reduction(
    spec: &ReductionSpec,
    data: &StudyDataset,
    reference: &StudyDataset,
) -> Result<Vec<f64>> {
    spec.check(data.p())?;
    if reference.p() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            got: reference.p(),
        });
    }
    let d = spec.dim();
    let mut out = vec![0.0; data.n() * d];
    fill_reduction(spec, data, reference, &mut out, d, 0)?;
    Ok(out)
}

fn fill_reduction(
    spec: &ReductionSpec,
    data: &StudyDataset,
    reference: &StudyDataset,
    out: &mut [f64],
    stride: usize,
    offset: usize,
) -> Result<()> {
    match spec {
        ReductionSpec::Column { index } => {
            for (i, r) in data.records().iter().enumerate() {
                out[i * stride + offset] = r.x[*index];
            }
        }
        ReductionSpec::PercentileOfColumn { index } => {
            let ecdf = Ecdf::new(reference.records().iter().map(|r| r.x[*index]).collect())?;
            for (i, r) in data.records().iter().enumerate() {
                out[i * stride + offset] = ecdf.eval(r.x[*index]);
            }
        }
        ReductionSpec::PercentileOfScore { score } => {
            let ecdf = Ecdf::new(
                reference
                    .records()
                    .iter()
                    .map(|r| score.score(&r.x))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            for (i, r) in data.records().iter().enumerate() {
                out[i * stride + offset] = ecdf.eval(score.score(&r.x)?);
            }
        }
        ReductionSpec::Stack { parts } => {
            let mut off = offset;
            for part in parts {
                fill_reduction(part, data, reference, out, stride, off)?;
                off += part.dim();
            }
        }
    }
    Ok(())
}

/// The evaluation set: points of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    d: usize,
    points: Vec<f64>,
}

impl EvaluationGrid {
    pub fn new(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "evaluation grid needs a nonempty multiple of d = {d} values"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("evaluation points must be finite".into()));
        }
        Ok(EvaluationGrid { d, points })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        EvaluationGrid::new(1, values)
    }

    /// `k` evenly spaced points `i/(k+1)`, `i = 1..=k`, strictly inside (0, 1).
    pub fn even(k: usize) -> Result<Self> {
        EvaluationGrid::from_values((1..=k).map(|i| i as f64 / (k + 1) as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.d)
    }

    /// Concatenates two grids of the same dimension.
    pub fn union(&self, other: &EvaluationGrid) -> Result<EvaluationGrid> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        EvaluationGrid::new(self.d, points)
    }
}
