//! Per-age-class evaluation: MAE, cumulative scores, epsilon-error and
//! estimation shift.
//!
//! Reductions run over records sorted by `subject_id` (then real age and
//! estimate), so results do not depend on input order beyond that key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dex::{AgePosterior, MAX_AGE};
use crate::plot::{self, PlotDocument, PlotError};

pub const DEFAULT_CS_LEVELS: [u32; 3] = [1, 2, 3];
pub const PREDICTIONS_HEADER: [&str; 3] = ["subject_id", "real_age", "estimated_age"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} of an empty record set is undefined")]
    Empty(&'static str),
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("epsilon-error needs apparent-age vote statistics; no record carries them")]
    NoVoteData,
    #[error("record {subject}: {reason}")]
    Record { subject: String, reason: String },
    #[error("predictions csv line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("predictions csv must have columns `{}`; found `{found}`", PREDICTIONS_HEADER.join(","))]
    Header { found: String },
    #[error("predictions csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Mean and spread of crowd-voted apparent ages for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteStats {
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    pub real_age: u32,
    pub estimated_age: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<AgePosterior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<VoteStats>,
}

impl PredictionRecord {
    pub fn new(subject_id: impl Into<String>, real_age: u32, estimated_age: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            real_age,
            estimated_age,
            posterior: None,
            votes: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| MetricsError::Record {
            subject: self.subject_id.clone(),
            reason,
        };
        if self.real_age > MAX_AGE {
            return Err(bad(format!("real age {} outside 0..={MAX_AGE}", self.real_age)));
        }
        if !(0.0..=f64::from(MAX_AGE)).contains(&self.estimated_age) {
            return Err(bad(format!(
                "estimated age {} outside 0..={MAX_AGE}",
                self.estimated_age
            )));
        }
        Ok(())
    }
}

/// How the absolute error fed to the cumulative score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// `|estimate - real|` on the real-valued estimate.
    #[default]
    Continuous,
    /// The estimate is rounded to the nearest year first.
    Rounded,
}

impl ErrorMode {
    fn error(self, r: &PredictionRecord) -> f64 {
        let est = match self {
            ErrorMode::Continuous => r.estimated_age,
            ErrorMode::Rounded => r.estimated_age.round(),
        };
        (est - f64::from(r.real_age)).abs()
    }
}

fn ordered(records: &[PredictionRecord]) -> Vec<&PredictionRecord> {
    let mut v: Vec<&PredictionRecord> = records.iter().collect();
    v.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then(a.real_age.cmp(&b.real_age))
            .then(a.estimated_age.total_cmp(&b.estimated_age))
    });
    v
}

fn non_empty(records: &[PredictionRecord], what: &'static str) -> Result<()> {
    if records.is_empty() {
        return Err(MetricsError::Empty(what));
    }
    records.iter().try_for_each(PredictionRecord::validate)
}

pub fn mae(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records, "MAE")?;
    let sum: f64 = ordered(records)
        .iter()
        .map(|r| (r.estimated_age - f64::from(r.real_age)).abs())
        .sum();
    Ok(sum / records.len() as f64)
}

/// Percentage of records whose absolute error is at most `l` years.
pub fn cumulative_score(records: &[PredictionRecord], l: u32) -> Result<f64> {
    cumulative_score_with(records, l, ErrorMode::Continuous)
}

pub fn cumulative_score_with(records: &[PredictionRecord], l: u32, mode: ErrorMode) -> Result<f64> {
    non_empty(records, "cumulative score")?;
    let hits = records.iter().filter(|r| mode.error(r) <= f64::from(l)).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// `1 - exp(-(x - mu)^2 / (2 sigma^2))`.
pub fn epsilon_error(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricsError::Sigma(sigma));
    }
    let d = x - mu;
    Ok(1.0 - (-(d * d) / (2.0 * sigma * sigma)).exp())
}

/// Mean epsilon-error over the records that carry vote statistics.
pub fn dataset_epsilon_error(records: &[PredictionRecord]) -> Result<f64> {
    let voted: Vec<&PredictionRecord> = ordered(records).into_iter().filter(|r| r.votes.is_some()).collect();
    if voted.is_empty() {
        return Err(MetricsError::NoVoteData);
    }
    let mut sum = 0.0;
    for r in &voted {
        let v = r.votes.expect("filtered");
        sum += epsilon_error(r.estimated_age, v.mean, v.std_dev)?;
    }
    Ok(sum / voted.len() as f64)
}

/// Mean signed error; positive means over-estimation.
pub fn estimation_shift(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records, "estimation shift")?;
    let sum: f64 = ordered(records)
        .iter()
        .map(|r| r.estimated_age - f64::from(r.real_age))
        .sum();
    Ok(sum / records.len() as f64)
}

/// Estimation shift per real-age class.
pub fn estimation_shift_by_class(records: &[PredictionRecord]) -> Result<BTreeMap<u32, f64>> {
    non_empty(records, "estimation shift")?;
    group(records)
        .into_iter()
        .map(|(age, rs)| Ok((age, estimation_shift(&rs)?)))
        .collect()
}

fn group(records: &[PredictionRecord]) -> BTreeMap<u32, Vec<PredictionRecord>> {
    let mut classes: BTreeMap<u32, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        classes.entry(r.real_age).or_default().push(r.clone());
    }
    classes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mae: f64,
    /// Cumulative score in percent, keyed by `l`.
    pub cs: BTreeMap<u32, f64>,
    pub mean_signed_error: f64,
}

impl ClassStats {
    fn compute(records: &[PredictionRecord], levels: &[u32], mode: ErrorMode) -> Result<Self> {
        Ok(Self {
            count: records.len(),
            mae: mae(records)?,
            cs: levels
                .iter()
                .map(|&l| Ok((l, cumulative_score_with(records, l, mode)?)))
                .collect::<Result<_>>()?,
            mean_signed_error: estimation_shift(records)?,
        })
    }
}

/// Per-class results. Classes without records are absent rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub cs_levels: Vec<u32>,
    pub error_mode: ErrorMode,
    pub per_class: BTreeMap<u32, ClassStats>,
    pub overall: ClassStats,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub fn build_report(records: &[PredictionRecord], cs_levels: &[u32]) -> Result<EvalReport> {
    build_report_with(records, cs_levels, ErrorMode::Continuous)
}

pub fn build_report_with(records: &[PredictionRecord], cs_levels: &[u32], mode: ErrorMode) -> Result<EvalReport> {
    non_empty(records, "report")?;
    let mut levels = cs_levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let per_class = group(records)
        .into_iter()
        .map(|(age, rs)| Ok((age, ClassStats::compute(&rs, &levels, mode)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        overall: ClassStats::compute(records, &levels, mode)?,
        cs_levels: levels,
        error_mode: mode,
        per_class,
    })
}

impl EvalReport {
    /// `age_class,count,mae,cs<l>...,mean_signed_error` with two decimals,
    /// one row per occupied class and a final `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("age_class,count,mae");
        for l in &self.cs_levels {
            let _ = write!(out, ",cs{l}");
        }
        out.push_str(",mean_signed_error\n");
        let mut row = |label: &str, s: &ClassStats| {
            let _ = write!(out, "{label},{},{:.2}", s.count, s.mae);
            for l in &self.cs_levels {
                let _ = write!(out, ",{:.2}", s.cs[l]);
            }
            let _ = writeln!(out, ",{:.2}", s.mean_signed_error);
        };
        for (age, s) in &self.per_class {
            row(&age.to_string(), s);
        }
        row("overall", &self.overall);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// MAE per age class.
    pub fn plot_mae(&self) -> Result<PlotDocument> {
        let points: Vec<(u32, f64)> = self.per_class.iter().map(|(&a, s)| (a, s.mae)).collect();
        let y_max = points.iter().map(|p| p.1).fold(1.0, f64::max).ceil();
        Ok(plot::series_chart(
            "Mean absolute error per age class",
            "mae",
            &points,
            y_max,
        )?)
    }

    /// Cumulative score at level `l` per age class, y in percent.
    pub fn plot_cs(&self, l: u32) -> Result<PlotDocument> {
        if !self.cs_levels.contains(&l) {
            return Err(PlotError::Empty("cumulative score level not in report").into());
        }
        let points: Vec<(u32, f64)> = self.per_class.iter().map(|(&a, s)| (a, s.cs[&l])).collect();
        Ok(plot::series_chart(
            &format!("Cumulative score (l = {l}) per age class"),
            &format!("cs{l}"),
            &points,
            100.0,
        )?)
    }
}

/// Reads `subject_id,real_age,estimated_age` rows; extra columns are
/// ignored.
pub fn read_predictions(input: impl Read) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(ci), Some(cr), Some(ce)) = (col("subject_id"), col("real_age"), col("estimated_age")) else {
        return Err(MetricsError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| MetricsError::Row {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize, name: &str| {
            row.get(i)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| MetricsError::Row {
                    line,
                    reason: format!("missing {name}"),
                })
        };
        let subject_id = get(ci, "subject_id")?.to_string();
        let real = get(cr, "real_age")?;
        let real_age: u32 = real.parse().map_err(|_| MetricsError::Row {
            line,
            reason: format!("real_age {real:?} is not an integer"),
        })?;
        let est = get(ce, "estimated_age")?;
        let estimated_age: f64 = est.parse().map_err(|_| MetricsError::Row {
            line,
            reason: format!("estimated_age {est:?} is not a number"),
        })?;
        let rec = PredictionRecord::new(subject_id, real_age, estimated_age);
        rec.validate().map_err(|e| MetricsError::Row {
            line,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
