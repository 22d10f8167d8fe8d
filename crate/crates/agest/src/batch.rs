//! Parallel batch estimation with input-ordered output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use agest_core::dataset::{self, DatasetError, IMAGE_EXTENSIONS};
use agest_core::preprocess::CropSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimateResult, Estimator};

pub const RESULTS_HEADER: [&str; 12] = [
    "path",
    "expected_age",
    "argmax_age",
    "top1",
    "top2",
    "top3",
    "confidence",
    "p_minor",
    "colorcast",
    "file_size",
    "modified_ts",
    "error",
];

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("cannot list {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] DatasetError),
    #[error("no image inputs found in {0}")]
    NoInputs(PathBuf),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchInput {
    File {
        path: PathBuf,
        crop: Option<CropSpec>,
        subject_id: Option<String>,
        real_age: Option<u32>,
    },
    Bytes {
        name: String,
        data: Vec<u8>,
    },
}

impl BatchInput {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        BatchInput::File {
            path: path.into(),
            crop: None,
            subject_id: None,
            real_age: None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BatchInput::File { path, .. } => path.to_string_lossy().into_owned(),
            BatchInput::Bytes { name, .. } => name.clone(),
        }
    }

    pub fn subject_id(&self) -> Option<&str> {
        match self {
            BatchInput::File { subject_id, .. } => subject_id.as_deref(),
            BatchInput::Bytes { .. } => None,
        }
    }

    pub fn real_age(&self) -> Option<u32> {
        match self {
            BatchInput::File { real_age, .. } => *real_age,
            BatchInput::Bytes { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub code: String,
    pub message: String,
}

/// Outcome for one input: exactly one of `result` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EstimateResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

impl ItemOutcome {
    pub fn is_ok(&self) -> bool {
        self.result.is_some()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by path.
pub fn inputs_from_dir(dir: &Path) -> Result<Vec<BatchInput>, BatchError> {
    let io = |source| BatchError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        if entry.file_type().map_err(io)?.is_file() && is_image(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths.into_iter().map(BatchInput::file).collect())
}

/// Records of a manifest CSV in manifest order. Relative paths are taken
/// relative to the manifest's directory.
pub fn inputs_from_manifest(manifest: &Path) -> Result<Vec<BatchInput>, BatchError> {
    let m = dataset::read_manifest_file(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    Ok(m.records
        .into_iter()
        .map(|r| BatchInput::File {
            path: if r.path.is_relative() {
                base.join(&r.path)
            } else {
                r.path
            },
            crop: r.crop,
            subject_id: Some(r.subject_id),
            real_age: Some(r.age),
        })
        .collect())
}

/// A directory is listed; anything else is read as a manifest.
pub fn collect_inputs(source: &Path) -> Result<Vec<BatchInput>, BatchError> {
    let inputs = if source.is_dir() {
        inputs_from_dir(source)?
    } else {
        inputs_from_manifest(source)?
    };
    if inputs.is_empty() {
        return Err(BatchError::NoInputs(source.to_path_buf()));
    }
    Ok(inputs)
}

pub fn process_one(estimator: &Estimator, input: &BatchInput) -> ItemOutcome {
    let res = match input {
        BatchInput::File { path, crop, .. } => estimator.estimate_file(path, crop.as_ref()),
        BatchInput::Bytes { name, data } => estimator.estimate_bytes(name, data, None),
    };
    let (result, error) = match res {
        Ok(r) => (Some(r), None),
        Err(e) => (
            None,
            Some(ItemError {
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        ),
    };
    ItemOutcome {
        path: input.label(),
        subject_id: input.subject_id().map(str::to_string),
        real_age: input.real_age(),
        result,
        error,
    }
}

/// Runs every input on a pool of `workers` threads. The returned vector is
/// in input order; `progress` is called once per finished item, in
/// completion order.
pub fn run_batch<F>(
    estimator: &Estimator,
    inputs: &[BatchInput],
    workers: usize,
    progress: F,
) -> Result<Vec<ItemOutcome>, BatchError>
where
    F: Fn(usize, &ItemOutcome) + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, input)| {
                let out = process_one(estimator, input);
                progress(i, &out);
                out
            })
            .collect()
    }))
}

fn top_cell(r: &EstimateResult, i: usize) -> String {
    r.top_k
        .get(i)
        .map(|t| format!("{}:{:.6}", t.age, t.prob))
        .unwrap_or_default()
}

/// Results CSV, one row per input. Failed rows leave the estimate columns
/// empty and fill `error`.
pub fn results_csv(items: &[ItemOutcome]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for item in items {
        let row: Vec<String> = match (&item.result, &item.error) {
            (Some(r), _) => vec![
                item.path.clone(),
                format!("{:.4}", r.expected_age),
                r.argmax_age.to_string(),
                top_cell(r, 0),
                top_cell(r, 1),
                top_cell(r, 2),
                format!("{:.6}", r.confidence),
                format!("{:.6}", r.p_minor),
                r.colorcast.as_str().to_string(),
                r.file_size.to_string(),
                r.modified_ts.map(|t| t.to_string()).unwrap_or_default(),
                String::new(),
            ],
            (None, e) => {
                let mut row = vec![String::new(); RESULTS_HEADER.len()];
                row[0] = item.path.clone();
                if let Some(e) = e {
                    row[11] = format!("{}: {}", e.code, e.message);
                }
                row
            }
        };
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 fields")
}

/// `subject_id,real_age,estimated_age` rows for successful items that carry
/// a ground-truth age.
pub fn predictions_csv(items: &[ItemOutcome]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(agest_core::metrics::PREDICTIONS_HEADER)
        .expect("in-memory write");
    for item in items {
        if let (Some(r), Some(age)) = (&item.result, item.real_age) {
            let subject = item.subject_id.clone().unwrap_or_else(|| item.path.clone());
            w.write_record([subject, age.to_string(), format!("{:.4}", r.expected_age)])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 fields")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Successful items whose p_minor exceeds one half.
    pub probable_minors: usize,
    pub mean_expected_age: Option<f64>,
}

pub fn summarize(items: &[ItemOutcome]) -> BatchSummary {
    let ok: Vec<&EstimateResult> = items.iter().filter_map(|i| i.result.as_ref()).collect();
    let mean = (!ok.is_empty()).then(|| ok.iter().map(|r| r.expected_age).sum::<f64>() / ok.len() as f64);
    BatchSummary {
        total: items.len(),
        succeeded: ok.len(),
        failed: items.len() - ok.len(),
        probable_minors: ok.iter().filter(|r| r.p_minor > 0.5).count(),
        mean_expected_age: mean,
    }
}

impl std::fmt::Display for BatchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = format!("{} images: {} ok, {} failed", self.total, self.succeeded, self.failed);
        if let Some(m) = self.mean_expected_age {
            let _ = write!(s, ", mean estimate {m:.2}, {} probable minors", self.probable_minors);
        }
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::tests::toy_estimator;
    use agest_core::preprocess::RawImage;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fixture_dir(n: usize, corrupt: Option<usize>) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            let path = dir.path().join(format!("img{i:02}.png"));
            if Some(i) == corrupt {
                std::fs::write(&path, b"garbage").unwrap();
            } else {
                let img = RawImage::from_fn(12, 12, |x, y| [(x * 20) as u8, (y * 20) as u8, (i * 25) as u8]).unwrap();
                std::fs::write(&path, img.to_png()).unwrap();
            }
        }
        std::fs::write(dir.path().join("readme.txt"), "skip").unwrap();
        dir
    }

    #[test]
    fn partial_failure_keeps_order() {
        let dir = fixture_dir(10, Some(3));
        let inputs = collect_inputs(dir.path()).unwrap();
        assert_eq!(inputs.len(), 10);
        let seen = AtomicUsize::new(0);
        let out = run_batch(&toy_estimator(), &inputs, 3, |_, _| {
            seen.fetch_add(1, Ordering::Relaxed);
        })
        .unwrap();
        assert_eq!(seen.load(Ordering::Relaxed), 10);
        assert_eq!(out.iter().filter(|o| o.is_ok()).count(), 9);
        assert_eq!(out[3].error.as_ref().unwrap().code, "undecodable_image");
        for (i, o) in out.iter().enumerate() {
            assert!(o.path.ends_with(&format!("img{i:02}.png")));
        }
        let csv = results_csv(&out);
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with(
            "path,expected_age,argmax_age,top1,top2,top3,confidence,p_minor,colorcast,file_size,modified_ts,error\n"
        ));
        let s = summarize(&out);
        assert_eq!((s.total, s.succeeded, s.failed), (10, 9, 1));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let dir = fixture_dir(8, None);
        let inputs = collect_inputs(dir.path()).unwrap();
        let est = toy_estimator();
        let one = results_csv(&run_batch(&est, &inputs, 1, |_, _| {}).unwrap());
        let four = results_csv(&run_batch(&est, &inputs, 4, |_, _| {}).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(collect_inputs(dir.path()), Err(BatchError::NoInputs(_))));
    }

    #[test]
    fn manifest_paths_resolve_against_manifest_dir() {
        let dir = fixture_dir(2, None);
        std::fs::write(
            dir.path().join("m.csv"),
            "subject_id,file_path,age,gender,source,crop_x,crop_y,crop_w,crop_h,rotation_deg,notes\n\
             a,img01.png,17,,t,,,,,,\nb,img00.png,30,,t,0,0,6,6,0,\n",
        )
        .unwrap();
        let inputs = collect_inputs(&dir.path().join("m.csv")).unwrap();
        assert_eq!(inputs[0].real_age(), Some(17));
        assert!(inputs[0].label().ends_with("img01.png"));
        let out = run_batch(&toy_estimator(), &inputs, 2, |_, _| {}).unwrap();
        assert!(out.iter().all(ItemOutcome::is_ok));
        let preds = predictions_csv(&out);
        assert!(preds.starts_with("subject_id,real_age,estimated_age\na,17,"));
        assert_eq!(
            agest_core::metrics::read_predictions(preds.as_bytes()).unwrap().len(),
            2
        );
    }
}
