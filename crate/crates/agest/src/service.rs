//! HTTP service over the estimator and the job store.

use std::path::PathBuf;
use std::sync::Arc;

use agest_core::metrics::{self, EvalReport, PredictionRecord};
use agest_core::preprocess::CropSpec;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::batch::{self, BatchInput, BatchSummary};
use crate::estimator::{EstimateResult, Estimator, SCHEMA_VERSION};
use crate::jobs::{BatchJob, JobError, JobStatus, JobStore, ReviewState};

pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub estimator: Option<Arc<Estimator>>,
    pub jobs: Arc<JobStore>,
    pub workers: usize,
}

impl AppState {
    pub fn new(estimator: Option<Estimator>, jobs: JobStore, workers: usize) -> Self {
        Self {
            estimator: estimator.map(Arc::new),
            jobs: Arc::new(jobs),
            workers: workers.max(1),
        }
    }

    fn estimator(&self) -> Result<Arc<Estimator>, ApiError> {
        self.estimator.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "model_not_loaded",
                "no model is loaded; start the service with --model",
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::UnknownJob(_) => Self::new(StatusCode::NOT_FOUND, "unknown_job", e.to_string()),
            JobError::UnknownItem { .. } => Self::new(StatusCode::NOT_FOUND, "unknown_item", e.to_string()),
            JobError::Finished(_) => Self::new(StatusCode::CONFLICT, "job_finished", e.to_string()),
            JobError::Journal { .. } | JobError::Replay { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "journal_error", e.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/estimate", post(estimate))
        .route("/v1/batch", post(submit_batch))
        .route("/v1/batch/{id}", get(get_job))
        .route("/v1/batch/{id}/report", get(job_report))
        .route("/v1/batch/{id}/items/{index}/review", put(review_item))
        .route("/v1/posterior/{id}/{index}", get(posterior_plot))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Serialize)]
struct Health {
    schema_version: u32,
    status: &'static str,
    model_loaded: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        schema_version: SCHEMA_VERSION,
        status: "ok",
        model_loaded: state.estimator.is_some(),
    })
}

fn is_multipart(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"))
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

/// File parts of a multipart body as (name, bytes), in upload order.
async fn multipart_files(req: Request) -> ApiResult<Vec<(String, Vec<u8>)>> {
    let mut mp = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut files = Vec::new();
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        let name = field
            .file_name()
            .or(field.name())
            .map(str::to_string)
            .unwrap_or_else(|| format!("upload{}", files.len()));
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        files.push((name, data.to_vec()));
    }
    Ok(files)
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

/// Raw image bytes, or a multipart body whose first file part is the image.
async fn estimate(State(state): State<AppState>, req: Request) -> ApiResult<Json<EstimateResult>> {
    let est = state.estimator()?;
    let (name, data) = if is_multipart(req.headers()) {
        multipart_files(req)
            .await?
            .into_iter()
            .next()
            .ok_or_else(|| ApiError::bad_request("multipart body has no file part"))?
    } else {
        let bytes = axum::body::to_bytes(req.into_body(), BODY_LIMIT)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        ("upload".to_string(), bytes.to_vec())
    };
    let result = run_blocking(move || est.estimate_bytes(&name, &data, None)).await?;
    result.map(Json).map_err(|e| {
        let code = e.code();
        let status = match code {
            "inference_failed" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, code, e.to_string())
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct PathInput {
    pub path: PathBuf,
    #[serde(default)]
    pub crop: Option<CropSpec>,
    #[serde(default)]
    pub subject_id: Option<String>,
    #[serde(default)]
    pub real_age: Option<u32>,
}

/// JSON batch request: explicit paths, a manifest CSV, or a directory,
/// all resolved on the server's filesystem.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    #[serde(default)]
    pub inputs: Vec<PathInput>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchAccepted {
    pub schema_version: u32,
    pub job_id: String,
    pub status: JobStatus,
    pub total: usize,
}

fn inputs_from_request(req: BatchRequest) -> ApiResult<Vec<BatchInput>> {
    let mut inputs: Vec<BatchInput> = req
        .inputs
        .into_iter()
        .map(|i| BatchInput::File {
            path: i.path,
            crop: i.crop,
            subject_id: i.subject_id,
            real_age: i.real_age,
        })
        .collect();
    let bad = |e: batch::BatchError| ApiError::bad_request(e.to_string());
    if let Some(m) = req.manifest {
        inputs.extend(batch::inputs_from_manifest(&m).map_err(bad)?);
    }
    if let Some(d) = req.directory {
        inputs.extend(batch::inputs_from_dir(&d).map_err(bad)?);
    }
    Ok(inputs)
}

async fn submit_batch(State(state): State<AppState>, req: Request) -> ApiResult<(StatusCode, Json<BatchAccepted>)> {
    let est = state.estimator()?;
    let inputs = if is_multipart(req.headers()) {
        multipart_files(req)
            .await?
            .into_iter()
            .map(|(name, data)| BatchInput::Bytes { name, data })
            .collect()
    } else if is_json(req.headers()) {
        let Json(body) = Json::<BatchRequest>::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        inputs_from_request(body)?
    } else {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "unsupported_media_type",
            "send application/json or multipart/form-data",
        ));
    };
    if inputs.is_empty() {
        return Err(ApiError::bad_request("batch has no inputs"));
    }

    let job_id = state.jobs.create(&inputs)?;
    let total = inputs.len();
    let jobs = state.jobs.clone();
    let workers = state.workers;
    let id = job_id.clone();
    tokio::task::spawn_blocking(move || execute_job(&est, &jobs, &id, &inputs, workers));
    Ok((
        StatusCode::ACCEPTED,
        Json(BatchAccepted {
            schema_version: SCHEMA_VERSION,
            job_id,
            status: JobStatus::Queued,
            total,
        }),
    ))
}

/// Runs a created job to completion, recording every item in the store.
pub fn execute_job(est: &Estimator, jobs: &JobStore, job_id: &str, inputs: &[BatchInput], workers: usize) {
    let run = || -> Result<JobStatus, String> {
        jobs.start(job_id).map_err(|e| e.to_string())?;
        let out = batch::run_batch(est, inputs, workers, |i, outcome| {
            if let Err(e) = jobs.record_item(job_id, i, outcome) {
                log::error!("job {job_id} item {i}: {e}");
            }
        })
        .map_err(|e| e.to_string())?;
        Ok(if out.iter().any(|o| o.is_ok()) {
            JobStatus::Done
        } else {
            JobStatus::Failed
        })
    };
    let status = run().unwrap_or_else(|e| {
        log::error!("job {job_id} failed: {e}");
        JobStatus::Failed
    });
    if let Err(e) = jobs.finish(job_id, status) {
        log::error!("job {job_id}: {e}");
    }
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BatchJob>> {
    state
        .jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| JobError::UnknownJob(id).into())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobReport {
    pub schema_version: u32,
    pub job_id: String,
    pub status: JobStatus,
    pub summary: BatchSummary,
    /// Present when some successful items carry a ground-truth age.
    pub evaluation: Option<EvalReport>,
}

async fn job_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobReport>> {
    let job = state.jobs.get(&id).ok_or_else(|| JobError::UnknownJob(id.clone()))?;
    if !job.status.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "job_not_finished",
            format!("job {id} is {:?}", job.status).to_lowercase(),
        ));
    }
    let outcomes = job.outcomes();
    let records: Vec<PredictionRecord> = outcomes
        .iter()
        .filter_map(|o| {
            let r = o.result.as_ref()?;
            let age = o.real_age?;
            let subject = o.subject_id.clone().unwrap_or_else(|| o.path.clone());
            Some(PredictionRecord::new(subject, age, r.expected_age))
        })
        .collect();
    let evaluation = if records.is_empty() {
        None
    } else {
        Some(
            metrics::build_report(&records, &metrics::DEFAULT_CS_LEVELS)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report_failed", e.to_string()))?,
        )
    };
    Ok(Json(JobReport {
        schema_version: SCHEMA_VERSION,
        job_id: id,
        status: job.status,
        summary: batch::summarize(&outcomes),
        evaluation,
    }))
}

#[derive(Debug, Deserialize)]
pub struct PlotQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn posterior_plot(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
    Query(q): Query<PlotQuery>,
) -> ApiResult<Response> {
    let job = state.jobs.get(&id).ok_or_else(|| JobError::UnknownJob(id.clone()))?;
    let item = job.results.get(index).ok_or_else(|| {
        ApiError::from(JobError::UnknownItem {
            job_id: id.clone(),
            index,
        })
    })?;
    let result = item.result.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_result",
            format!("item {index} of {id} has no estimate"),
        )
    })?;
    let posterior = result
        .posterior
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_result", "result carries no posterior"))?;
    let doc = agest_core::dex::posterior_plot(posterior, result.predicted_age(), item.real_age);
    Ok(match q.format.as_deref() {
        None | Some("svg") => ([(header::CONTENT_TYPE, "image/svg+xml")], doc.svg).into_response(),
        Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], doc.csv).into_response(),
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unknown plot format {other:?}; use svg or csv"
            )))
        }
    })
}

#[derive(Debug, Deserialize)]
pub struct ReviewRequest {
    pub review_state: ReviewState,
    #[serde(default)]
    pub reviewer_note: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub schema_version: u32,
    pub job_id: String,
    pub item: crate::jobs::JobItem,
}

async fn review_item(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
    body: Result<Json<ReviewRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<ReviewResponse>> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let item = state.jobs.review(&id, index, body.review_state, &body.reviewer_note)?;
    Ok(Json(ReviewResponse {
        schema_version: SCHEMA_VERSION,
        job_id: id,
        item,
    }))
}
