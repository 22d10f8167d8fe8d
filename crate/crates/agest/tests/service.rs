mod common;

use std::time::{Duration, Instant};

use agest::estimator::{EstimateOptions, Estimator};
use agest::jobs::{BatchJob, JobStatus, JobStore, ReviewState};
use agest::service::{router, AppState, ErrorBody};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

fn app_with(dir: &std::path::Path, jobs: JobStore) -> Router {
    let model = common::write_toy_model(dir, 5);
    let est = Estimator::load(&model, None, EstimateOptions::default()).unwrap();
    router(AppState::new(Some(est), jobs, 2), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn wait_done(app: &Router, job_id: &str) -> BatchJob {
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut last = 0;
    loop {
        let (status, body) = get(app, &format!("/v1/batch/{job_id}")).await;
        assert_eq!(status, StatusCode::OK);
        let job: BatchJob = serde_json::from_slice(&body).unwrap();
        assert!(job.progress.completed >= last, "progress went backwards");
        last = job.progress.completed;
        if job.status.is_terminal() {
            return job;
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

fn multipart(files: &[(String, Vec<u8>)]) -> (String, Vec<u8>) {
    let boundary = "agest-test-boundary";
    let mut body = Vec::new();
    for (name, data) in files {
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"files\"; filename=\"{name}\"\r\n\
                 Content-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn multipart_batch_with_error_item_report_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_with(tmp.path(), JobStore::in_memory());
    let mut files: Vec<(String, Vec<u8>)> = (0..4)
        .map(|i| (format!("f{i}.png"), common::synthetic_image(i).to_png()))
        .collect();
    files.insert(2, ("broken.jpg".into(), b"nope".to_vec()));
    let (ct, body) = multipart(&files);
    let req = Request::post("/v1/batch")
        .header("content-type", ct)
        .body(Body::from(body))
        .unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&body));
    let accepted: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(accepted["schema_version"], 1);
    let job_id = accepted["job_id"].as_str().unwrap().to_string();

    let job = wait_done(&app, &job_id).await;
    assert_eq!(job.status, JobStatus::Done);
    assert_eq!(job.progress.completed, 5);
    assert_eq!(job.inputs, vec!["f0.png", "f1.png", "broken.jpg", "f2.png", "f3.png"]);
    assert_eq!(job.results[2].error.as_ref().unwrap().code, "undecodable_image");
    assert!(job.results.iter().enumerate().all(|(i, r)| r.index == i));

    let (status, body) = get(&app, &format!("/v1/batch/{job_id}/report")).await;
    assert_eq!(status, StatusCode::OK);
    let report: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(report["summary"]["succeeded"], 4);
    assert_eq!(report["summary"]["failed"], 1);
    assert!(report["evaluation"].is_null());

    let (status, svg) = get(&app, &format!("/v1/posterior/{job_id}/0")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(svg).unwrap().starts_with("<svg"));
    let (status, csv) = get(&app, &format!("/v1/posterior/{job_id}/0?format=csv")).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 102);
    let probs: f64 = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((probs - 1.0).abs() < 1e-4);
    assert_eq!(
        get(&app, &format!("/v1/posterior/{job_id}/2")).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, &format!("/v1/posterior/{job_id}/99")).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, &format!("/v1/posterior/{job_id}/0?format=png")).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn manifest_batch_reports_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_with(tmp.path(), JobStore::in_memory());
    let paths = common::write_images(&tmp.path().join("imgs"), 3, &[]);
    let mut m = String::from("subject_id,file_path,age,gender,source,crop_x,crop_y,crop_w,crop_h,rotation_deg,notes\n");
    for (i, p) in paths.iter().enumerate() {
        m.push_str(&format!("s{i},{},{},,t,,,,,,\n", p.display(), 15 + i));
    }
    let manifest = tmp.path().join("m.csv");
    std::fs::write(&manifest, m).unwrap();
    let req = Request::post("/v1/batch")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::json!({ "manifest": manifest }).to_string()))
        .unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job_id = serde_json::from_slice::<serde_json::Value>(&body).unwrap()["job_id"]
        .as_str()
        .unwrap()
        .to_string();
    let job = wait_done(&app, &job_id).await;
    assert_eq!(job.results[1].real_age, Some(16));
    let (_, body) = get(&app, &format!("/v1/batch/{job_id}/report")).await;
    let report: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(report["evaluation"]["overall"]["count"], 3);
    let (_, svg) = get(&app, &format!("/v1/posterior/{job_id}/1")).await;
    assert!(String::from_utf8(svg).unwrap().contains("role-actual"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn review_survives_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let journal = tmp.path().join("jobs.jsonl");
    let paths = common::write_images(&tmp.path().join("imgs"), 2, &[]);
    let job_id = {
        let app = app_with(tmp.path(), JobStore::open(&journal).unwrap());
        let inputs: Vec<_> = paths.iter().map(|p| serde_json::json!({ "path": p })).collect();
        let req = Request::post("/v1/batch")
            .header("content-type", "application/json")
            .body(Body::from(serde_json::json!({ "inputs": inputs }).to_string()))
            .unwrap();
        let (_, body) = call(&app, req).await;
        let job_id = serde_json::from_slice::<serde_json::Value>(&body).unwrap()["job_id"]
            .as_str()
            .unwrap()
            .to_string();
        wait_done(&app, &job_id).await;
        let req = Request::put(format!("/v1/batch/{job_id}/items/1/review"))
            .header("content-type", "application/json")
            .body(Body::from(
                r#"{"review_state":"flagged_minor","reviewer_note":"school uniform"}"#,
            ))
            .unwrap();
        let (status, body) = call(&app, req).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        let req = Request::put(format!("/v1/batch/{job_id}/items/1/review"))
            .header("content-type", "application/json")
            .body(Body::from(r#"{"review_state":"maybe"}"#))
            .unwrap();
        assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);
        job_id
    };
    let app = app_with(tmp.path(), JobStore::open(&journal).unwrap());
    let (status, body) = get(&app, &format!("/v1/batch/{job_id}")).await;
    assert_eq!(status, StatusCode::OK);
    let job: BatchJob = serde_json::from_slice(&body).unwrap();
    assert_eq!(job.status, JobStatus::Done);
    assert_eq!(job.results[1].review_state, ReviewState::FlaggedMinor);
    assert_eq!(job.results[1].reviewer_note, "school uniform");
    assert!(job.results[0].result.is_some());
}

#[tokio::test]
async fn error_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_with(tmp.path(), JobStore::in_memory());
    let (status, body) = get(&app, "/v1/batch/nope/report").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let e: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!((e.schema_version, e.code.as_str()), (1, "unknown_job"));
    assert_eq!(get(&app, "/v1/posterior/nope/0").await.0, StatusCode::NOT_FOUND);
    let req = Request::put("/v1/batch/nope/items/0/review")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"review_state":"confirmed_adult"}"#))
        .unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::NOT_FOUND);
    let (status, body) = get(&app, "/v1/health").await;
    assert_eq!(status, StatusCode::OK);
    let h: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(h["model_loaded"], true);
}

#[tokio::test]
async fn unfinished_job_report_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let jobs = JobStore::in_memory();
    let id = jobs.create(&[agest::BatchInput::file("a.png")]).unwrap();
    let app = app_with(tmp.path(), jobs);
    let (status, body) = get(&app, &format!("/v1/batch/{id}/report")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let e: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!(e.code, "job_not_finished");
}

#[tokio::test]
async fn serves_ui_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let ui = tmp.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>triage</html>").unwrap();
    let app = router(AppState::new(None, JobStore::in_memory(), 1), Some(ui));
    let (status, body) = get(&app, "/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>triage</html>");
    let (status, _) = get(&app, "/v1/health").await;
    assert_eq!(status, StatusCode::OK);
}
