//! In-memory batch job store with an append-only JSONL journal.
//!
//! Journal lines, one JSON object each, tagged by `event`:
//!
//! - `job_created`  `{job_id, ts, inputs: [{path, subject_id?, real_age?}]}`
//! - `job_started`  `{job_id, ts}`
//! - `item_done`    `{job_id, ts, index, result?, error?}`
//! - `job_finished` `{job_id, ts, status}`
//! - `review`       `{job_id, ts, index, review_state, reviewer_note}`
//!
//! Replaying the journal rebuilds the store. Jobs without a `job_finished`
//! line were interrupted and are marked failed on replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{BatchInput, ItemError, ItemOutcome};
use crate::estimator::{EstimateResult, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum JobError {
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job {job_id} has no item {index}")]
    UnknownItem { job_id: String, index: usize },
    #[error("job {0} is already finished")]
    Finished(String),
    #[error("journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} line {line}: {message}")]
    Replay {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    #[default]
    Unreviewed,
    FlaggedMinor,
    ConfirmedAdult,
    NeedsEscalation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInput {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_age: Option<u32>,
}

impl From<&BatchInput> for JobInput {
    fn from(input: &BatchInput) -> Self {
        Self {
            path: input.label(),
            subject_id: input.subject_id().map(str::to_string),
            real_age: input.real_age(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobItem {
    pub index: usize,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_age: Option<u32>,
    pub result: Option<EstimateResult>,
    pub error: Option<ItemError>,
    pub review_state: ReviewState,
    pub reviewer_note: String,
}

impl JobItem {
    pub fn is_pending(&self) -> bool {
        self.result.is_none() && self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchJob {
    pub schema_version: u32,
    pub job_id: String,
    pub status: JobStatus,
    pub progress: Progress,
    pub inputs: Vec<String>,
    pub results: Vec<JobItem>,
}

impl BatchJob {
    fn new(job_id: String, inputs: Vec<JobInput>) -> Self {
        let results: Vec<JobItem> = inputs
            .into_iter()
            .enumerate()
            .map(|(index, i)| JobItem {
                index,
                path: i.path,
                subject_id: i.subject_id,
                real_age: i.real_age,
                result: None,
                error: None,
                review_state: ReviewState::Unreviewed,
                reviewer_note: String::new(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            job_id,
            status: JobStatus::Queued,
            progress: Progress {
                completed: 0,
                total: results.len(),
            },
            inputs: results.iter().map(|r| r.path.clone()).collect(),
            results,
        }
    }

    /// Completed items as batch outcomes, in input order.
    pub fn outcomes(&self) -> Vec<ItemOutcome> {
        self.results
            .iter()
            .filter(|i| !i.is_pending())
            .map(|i| ItemOutcome {
                path: i.path.clone(),
                subject_id: i.subject_id.clone(),
                real_age: i.real_age,
                result: i.result.clone(),
                error: i.error.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    JobCreated {
        job_id: String,
        ts: u64,
        inputs: Vec<JobInput>,
    },
    JobStarted {
        job_id: String,
        ts: u64,
    },
    ItemDone {
        job_id: String,
        ts: u64,
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<EstimateResult>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ItemError>,
    },
    JobFinished {
        job_id: String,
        ts: u64,
        status: JobStatus,
    },
    Review {
        job_id: String,
        ts: u64,
        index: usize,
        review_state: ReviewState,
        reviewer_note: String,
    },
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Default)]
struct Inner {
    jobs: BTreeMap<String, BatchJob>,
    next_id: u64,
    journal: Option<(PathBuf, File)>,
}

impl Inner {
    fn apply(&mut self, event: &Event) -> Result<(), JobError> {
        match event {
            Event::JobCreated { job_id, inputs, .. } => {
                if let Some(n) = job_id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                    self.next_id = self.next_id.max(n);
                }
                self.jobs
                    .insert(job_id.clone(), BatchJob::new(job_id.clone(), inputs.clone()));
            }
            Event::JobStarted { job_id, .. } => {
                let job = self.live_job(job_id)?;
                job.status = JobStatus::Running;
            }
            Event::ItemDone {
                job_id,
                index,
                result,
                error,
                ..
            } => {
                let job = self.live_job(job_id)?;
                let item = job.results.get_mut(*index).ok_or_else(|| JobError::UnknownItem {
                    job_id: job_id.clone(),
                    index: *index,
                })?;
                if item.is_pending() {
                    job.progress.completed += 1;
                }
                item.result = result.clone();
                item.error = error.clone();
            }
            Event::JobFinished { job_id, status, .. } => {
                let job = self.live_job(job_id)?;
                job.status = *status;
            }
            Event::Review {
                job_id,
                index,
                review_state,
                reviewer_note,
                ..
            } => {
                let job = self
                    .jobs
                    .get_mut(job_id)
                    .ok_or_else(|| JobError::UnknownJob(job_id.clone()))?;
                let item = job.results.get_mut(*index).ok_or_else(|| JobError::UnknownItem {
                    job_id: job_id.clone(),
                    index: *index,
                })?;
                item.review_state = *review_state;
                item.reviewer_note = reviewer_note.clone();
            }
        }
        Ok(())
    }

    fn live_job(&mut self, job_id: &str) -> Result<&mut BatchJob, JobError> {
        let job = self
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| JobError::UnknownJob(job_id.to_string()))?;
        if job.status.is_terminal() {
            return Err(JobError::Finished(job_id.to_string()));
        }
        Ok(job)
    }

    /// Validates by applying, then journals.
    fn record(&mut self, event: Event) -> Result<(), JobError> {
        self.apply(&event)?;
        if let Some((path, file)) = &mut self.journal {
            let line = serde_json::to_string(&event).expect("events serialize");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|source| JobError::Journal {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

/// Thread-safe job store. All mutations go through one mutex so journal
/// order equals application order.
#[derive(Default)]
pub struct JobStore {
    inner: Mutex<Inner>,
}

impl JobStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replays `path` if it exists, then appends to it.
    pub fn open(path: &Path) -> Result<Self, JobError> {
        let journal_err = |source| JobError::Journal {
            path: path.to_path_buf(),
            source,
        };
        let mut inner = Inner::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(journal_err)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(journal_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let replay_err = |message: String| JobError::Replay {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message,
                };
                let event: Event = serde_json::from_str(&line).map_err(|e| replay_err(e.to_string()))?;
                inner.apply(&event).map_err(|e| replay_err(e.to_string()))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(journal_err)?;
        inner.journal = Some((path.to_path_buf(), file));

        let interrupted: Vec<String> = inner
            .jobs
            .values()
            .filter(|j| !j.status.is_terminal())
            .map(|j| j.job_id.clone())
            .collect();
        for job_id in interrupted {
            log::warn!("job {job_id} was interrupted; marking failed");
            inner.record(Event::JobFinished {
                job_id,
                ts: now(),
                status: JobStatus::Failed,
            })?;
        }
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create(&self, inputs: &[BatchInput]) -> Result<String, JobError> {
        let mut inner = self.lock();
        let job_id = format!("job-{:06}", inner.next_id + 1);
        inner.record(Event::JobCreated {
            job_id: job_id.clone(),
            ts: now(),
            inputs: inputs.iter().map(JobInput::from).collect(),
        })?;
        Ok(job_id)
    }

    pub fn start(&self, job_id: &str) -> Result<(), JobError> {
        self.lock().record(Event::JobStarted {
            job_id: job_id.to_string(),
            ts: now(),
        })
    }

    pub fn record_item(&self, job_id: &str, index: usize, outcome: &ItemOutcome) -> Result<(), JobError> {
        self.lock().record(Event::ItemDone {
            job_id: job_id.to_string(),
            ts: now(),
            index,
            result: outcome.result.clone(),
            error: outcome.error.clone(),
        })
    }

    pub fn finish(&self, job_id: &str, status: JobStatus) -> Result<(), JobError> {
        self.lock().record(Event::JobFinished {
            job_id: job_id.to_string(),
            ts: now(),
            status,
        })
    }

    pub fn review(&self, job_id: &str, index: usize, state: ReviewState, note: &str) -> Result<JobItem, JobError> {
        let mut inner = self.lock();
        inner.record(Event::Review {
            job_id: job_id.to_string(),
            ts: now(),
            index,
            review_state: state,
            reviewer_note: note.to_string(),
        })?;
        Ok(inner.jobs[job_id].results[index].clone())
    }

    pub fn get(&self, job_id: &str) -> Option<BatchJob> {
        self.lock().jobs.get(job_id).cloned()
    }

    pub fn job_ids(&self) -> Vec<String> {
        self.lock().jobs.keys().cloned().collect()
    }
}
