//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use agest::estimator::{EstimateOptions, EstimateResult, Estimator};
use agest::jobs::{BatchJob, JobStatus, JobStore};
use agest::service::{self, AppState, ErrorBody};
use agest_core::dataset::{self, CollisionPolicy, DatasetManifest, DedupPolicy, ImageRecord};
use agest_core::dex::{self, AgePosterior};
use agest_core::metrics::{self, PredictionRecord};
use agest_core::network::weights::{self, WeightError};
use agest_core::network::{build_vgg16_age, LayerKind, LayerSpec, NetworkGraph};
use agest_core::tensor::{self, ConvParams, Tensor};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    k: &[f32],
    (o, kh, kw): (usize, usize, usize),
    b: &[f32],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f32>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0f32; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[oc] as f64;
                for ic in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * sh + u) as isize - ph as isize;
                            let xx = (j * sw + v) as isize - pw as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let xv = x[ic * h * w + y as usize * w + xx as usize] as f64;
                            let kv = k[((oc * c + ic) * kh + u) * kw + v] as f64;
                            acc += xv * kv;
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = acc as f32;
            }
        }
    }
    (out, oh, ow)
}

fn conv_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0f32;
    let mut cases = 0;
    while cases < 200 {
        let (c, h, w) = (
            rng.random_range(1..=4),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let (o, kh, kw) = (
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let pad = (rng.random_range(0..=1), rng.random_range(0..=1));
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            continue;
        }
        cases += 1;
        let x = random_tensor(&mut rng, vec![c, h, w]);
        let k = random_tensor(&mut rng, vec![o, c, kh, kw]);
        let b = random_tensor(&mut rng, vec![o]);
        let got = tensor::conv2d(
            &x,
            &ConvParams::new(&k).with_bias(&b).with_stride(stride).with_padding(pad),
        )
        .map_err(|e| e.to_string())?;
        let (want, oh, ow) = naive_conv(x.data(), (c, h, w), k.data(), (o, kh, kw), b.data(), stride, pad);
        ensure!(
            got.shape() == [o, oh, ow],
            "shape {:?} != {:?}",
            got.shape(),
            [o, oh, ow]
        );
        for (g, w) in got.data().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-5, "max |diff| {worst:e} exceeds 1e-5");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "200 cases, max |diff| {worst:e}, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn forward_hand_check() -> Outcome {
    let mut g = NetworkGraph::new(
        vec![1, 3, 3],
        vec![
            LayerSpec::conv("conv", 1, 2, 0),
            LayerSpec::relu("relu"),
            LayerSpec::flatten("flat"),
            LayerSpec::fully_connected("fc", 2),
        ],
    )
    .map_err(|e| e.to_string())?;
    let t = |shape: Vec<usize>, d: &[f32]| Tensor::new(shape, d.to_vec()).unwrap();
    g.set_weights("conv", t(vec![1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]), t(vec![1], &[0.0]))
        .map_err(|e| e.to_string())?;
    g.set_weights(
        "fc",
        t(vec![2, 4], &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0]),
        t(vec![2], &[0.5, -1.0]),
    )
    .map_err(|e| e.to_string())?;
    let x = t(vec![1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    let y = g.forward(&x).map_err(|e| e.to_string())?;
    // conv: [[1+5, 2+6], [4+8, 5+9]] = [6, 8, 12, 14]
    // fc:   [6+8+12+14+0.5, 6-8+12-14-1]
    ensure!(y.data() == [40.5f32, -5.0], "got {:?}", y.data());
    Ok("output [40.5, -5.0] exact".into())
}

/// Parameter count from the published layer table.
fn vgg16_closed_form(classes: usize) -> usize {
    let cfg = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
    let mut cin = 3;
    let mut total = 0;
    for cout in cfg {
        total += (9 * cin + 1) * cout;
        cin = cout;
    }
    total + (512 * 7 * 7 + 1) * 4096 + (4096 + 1) * 4096 + (4096 + 1) * classes
}

fn vgg16_builder() -> Outcome {
    let g = build_vgg16_age(101).map_err(|e| e.to_string())?;
    let convs = g
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
        .count();
    let fcs = g
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::FullyConnected { .. }))
        .count();
    ensure!(convs == 13 && fcs == 3, "census {convs} conv + {fcs} fc");
    ensure!(g.output_shape() == [101], "output {:?}", g.output_shape());
    ensure!(g.input_shape() == [3, 224, 224], "input {:?}", g.input_shape());
    let expected = vgg16_closed_form(101);
    ensure!(
        g.parameter_count() == expected,
        "{} params, closed form {expected}",
        g.parameter_count()
    );
    let imagenet = build_vgg16_age(1000).map_err(|e| e.to_string())?.parameter_count();
    ensure!(imagenet == 138_357_544, "1000-class count {imagenet}");
    Ok(format!("13 conv + 3 fc, output 101, {expected} parameters"))
}

fn softmax_dex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_sum = 0f64;
    let mut worst_shift = 0f64;
    for _ in 0..1000 {
        let scale = rng.random_range(0.1..40.0);
        let logits: Vec<f64> = (0..101).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let p = tensor::softmax_f64(&logits).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-500.0..500.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let q = tensor::softmax_f64(&shifted).map_err(|e| e.to_string())?;
        for (a, b) in p.iter().zip(&q) {
            worst_shift = worst_shift.max((a - b).abs());
        }
        let post = AgePosterior::new(p.clone()).map_err(|e| e.to_string())?;
        ensure!(
            (0.0..=100.0).contains(&dex::expected_age(&post)),
            "expected age out of range"
        );
    }
    ensure!(worst_sum <= 1e-9, "sum error {worst_sum:e}");
    ensure!(worst_shift <= 1e-9, "shift error {worst_shift:e}");
    for a in 0..=100u32 {
        let e = dex::expected_age(&AgePosterior::one_hot(a).map_err(|e| e.to_string())?);
        ensure!(e == f64::from(a), "one-hot {a} -> {e}");
    }
    Ok(format!(
        "1000 vectors, max sum error {worst_sum:e}, max shift error {worst_shift:e}, 101 one-hots exact"
    ))
}

struct Naive {
    mae: f64,
    shift: f64,
}

fn naive_metrics(records: &[PredictionRecord]) -> Naive {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut abs = 0.0;
    let mut signed = 0.0;
    for r in &sorted {
        let d = r.estimated_age - r.real_age as f64;
        abs += d.abs();
        signed += d;
    }
    let n = records.len() as f64;
    Naive {
        mae: abs / n,
        shift: signed / n,
    }
}

fn naive_cs(records: &[PredictionRecord], l: u32) -> f64 {
    let mut hits = 0usize;
    for r in records {
        if (r.estimated_age - r.real_age as f64).abs() <= l as f64 {
            hits += 1;
        }
    }
    100.0 * hits as f64 / records.len() as f64
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..1000 {
        let n = rng.random_range(1..=60);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let records: Vec<PredictionRecord> = ids
            .iter()
            .map(|&i| {
                let real = rng.random_range(0..=100u32);
                let est = if rng.random_bool(0.5) {
                    rng.random_range(0..=100u32) as f64
                } else {
                    rng.random_range(0.0..=100.0)
                };
                PredictionRecord::new(format!("s{i:03}"), real, est)
            })
            .collect();
        let naive = naive_metrics(&records);
        let mae = metrics::mae(&records).map_err(|e| e.to_string())?;
        let shift = metrics::estimation_shift(&records).map_err(|e| e.to_string())?;
        ensure!(mae == naive.mae, "set {set}: mae {mae} != {}", naive.mae);
        ensure!(shift == naive.shift, "set {set}: shift {shift} != {}", naive.shift);
        let mut prev = -1.0;
        for l in (0..=10).chain([100]) {
            let cs = metrics::cumulative_score(&records, l).map_err(|e| e.to_string())?;
            ensure!(cs == naive_cs(&records, l), "set {set}: cs{l} {cs}");
            ensure!(cs >= prev, "set {set}: cs not monotone at l={l}");
            prev = cs;
        }
        ensure!(prev == 100.0, "set {set}: cs100 {prev}");
        let report = metrics::build_report(&records, &[1, 2, 3]).map_err(|e| e.to_string())?;
        let total: usize = report.per_class.values().map(|s| s.count).sum();
        ensure!(total == n && report.overall.count == n, "set {set}: counts {total}/{n}");
    }
    let target = 1.0 - (-0.5f64).exp();
    for (mu, sigma) in [(30.0, 1.0), (17.5, 4.2), (60.0, 0.3), (0.0, 12.0)] {
        for x in [mu + sigma, mu - sigma] {
            let e = metrics::epsilon_error(x, mu, sigma).map_err(|e| e.to_string())?;
            ensure!((e - target).abs() <= 1e-12, "epsilon({x},{mu},{sigma}) = {e}");
        }
    }
    Ok("1000 sets exact, cs monotone, epsilon at sigma within 1e-12".into())
}

fn report_fixture() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let preds = std::fs::File::open(dir.join("table_row_predictions.csv")).map_err(|e| e.to_string())?;
    let golden = std::fs::read_to_string(dir.join("table_row_report.csv")).map_err(|e| e.to_string())?;
    let records = metrics::read_predictions(preds).map_err(|e| e.to_string())?;
    let csv = metrics::build_report(&records, &metrics::DEFAULT_CS_LEVELS)
        .map_err(|e| e.to_string())?
        .to_csv();
    ensure!(csv == golden, "report differs from golden:\n{csv}");
    ensure!(csv.contains("\n17,19,1.79,52.63,84.21,89.47,"), "age 17 row missing");
    Ok("golden CSV byte-exact, row 17: 1.79, 52.63, 84.21, 89.47".into())
}

fn manifest_of(prefix: &str, n: usize) -> DatasetManifest {
    let records = (0..n)
        .map(|k| {
            ImageRecord::new(
                format!("{prefix}{k:03}"),
                (k % 90) as u32,
                format!("{prefix}{k:03}_{}.jpg", k % 90),
                prefix,
            )
        })
        .collect();
    DatasetManifest::new(prefix, records)
}

fn dataset_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a_path = tmp.path().join("a.csv");
    let b_path = tmp.path().join("b.csv");
    dataset::write_manifest_file(&manifest_of("csae", 245), &a_path).map_err(|e| e.to_string())?;
    dataset::write_manifest_file(&manifest_of("fgnet", 82), &b_path).map_err(|e| e.to_string())?;
    let a = dataset::read_manifest_file(&a_path).map_err(|e| e.to_string())?;
    let b = dataset::read_manifest_file(&b_path).map_err(|e| e.to_string())?;
    let merged = dataset::merge(&a, &b, CollisionPolicy::Error).map_err(|e| e.to_string())?;
    ensure!(merged.len() == 327, "merged {} records", merged.len());

    let img_dir = tmp.path().join("fgnet");
    std::fs::create_dir(&img_dir).map_err(|e| e.to_string())?;
    for (subject, age) in common::fgnet_layout() {
        std::fs::write(img_dir.join(format!("{subject}_{age}.jpg")), b"").map_err(|e| e.to_string())?;
    }
    let ingested = dataset::ingest_directory(&img_dir, "fgnet").map_err(|e| e.to_string())?;
    ensure!(ingested.rejects.is_empty(), "{} rejects", ingested.rejects.len());
    let m = ingested.manifest;
    ensure!(
        m.len() == 1002 && m.subjects().len() == 82,
        "{} records / {} subjects",
        m.len(),
        m.subjects().len()
    );
    let first = dataset::dedup(&m, DedupPolicy::RandomSeeded(42), Some(20));
    let second = dataset::dedup(&m, DedupPolicy::RandomSeeded(42), Some(20));
    ensure!(first.manifest.len() == 82, "dedup kept {}", first.manifest.len());
    ensure!(first == second, "dedup not reproducible for a fixed seed");
    ensure!(
        first.manifest.records.iter().all(|r| r.age <= 20),
        "record above max age kept"
    );
    ensure!(first.manifest.subjects().len() == 82, "subjects lost");
    Ok("245 + 82 -> 327; 1002 records / 82 subjects -> 82, reproducible".into())
}

fn random_small_graph(rng: &mut ChaCha8Rng) -> NetworkGraph {
    let c = rng.random_range(1..=3);
    let side = rng.random_range(4..=8);
    let mut layers = Vec::new();
    for i in 0..rng.random_range(1..=2) {
        layers.push(LayerSpec::conv(
            format!("conv{i}"),
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(0..=1),
        ));
        layers.push(LayerSpec::relu(format!("relu{i}")));
    }
    let spatial = NetworkGraph::new(vec![c, side, side], layers.clone())
        .unwrap()
        .output_shape()[1];
    if spatial >= 2 && rng.random_bool(0.5) {
        layers.push(LayerSpec::max_pool("pool", 2, 2));
    }
    layers.push(LayerSpec::flatten("flatten"));
    layers.push(LayerSpec::fully_connected("fc1", rng.random_range(1..=6)));
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::fully_connected("fc2", rng.random_range(1..=6)));
    }
    NetworkGraph::new(vec![c, side, side], layers).unwrap()
}

/// Hand-rolled writer for a single-blob weight file.
fn one_blob_file(name: &str, shape: &[u32]) -> Vec<u8> {
    let mut b = b"AGEW".to_vec();
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(name.len() as u16).to_le_bytes());
    b.extend_from_slice(name.as_bytes());
    b.push(shape.len() as u8);
    for d in shape {
        b.extend_from_slice(&d.to_le_bytes());
    }
    let n: u32 = shape.iter().product();
    for i in 0..n {
        b.extend_from_slice(&(i as f32 * 0.25).to_le_bytes());
    }
    b
}

fn weight_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let mut g = random_small_graph(&mut rng);
        g.randomize_weights(case);
        let bytes = weights::encode(&g).map_err(|e| e.to_string())?;
        let loaded = weights::load_weights(&g.without_weights(), &bytes).map_err(|e| format!("case {case}: {e}"))?;
        for (layer, _, _) in g.parameter_shapes() {
            let (a, b) = (g.weights(layer).unwrap(), loaded.weights(layer).unwrap());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            ensure!(
                bits(&a.weight) == bits(&b.weight) && bits(&a.bias) == bits(&b.bias),
                "case {case}: {layer} not bit-exact"
            );
        }
        ensure!(
            weights::encode(&loaded).map_err(|e| e.to_string())? == bytes,
            "case {case}: re-encode differs"
        );
    }

    let mut g = random_small_graph(&mut rng);
    g.randomize_weights(1);
    let mut bytes = weights::encode(&g).map_err(|e| e.to_string())?;
    bytes[..4].copy_from_slice(b"GGUF");
    match weights::load_weights(&g, &bytes) {
        Err(WeightError::BadMagic(_)) => {}
        other => return Err(format!("bad magic accepted or misreported: {other:?}")),
    }

    let vgg = build_vgg16_age(101).map_err(|e| e.to_string())?;
    let file = one_blob_file("conv1_1.weight", &[64, 3, 5, 5]);
    match weights::load_weights(&vgg, &file) {
        Err(e @ WeightError::Shape { .. }) if e.to_string().contains("conv1_1") => {}
        other => return Err(format!("shape mismatch not reported for conv1_1: {other:?}")),
    }
    Ok("100 round-trips bit-exact; bad magic and conv1_1 shape mismatch rejected".into())
}

fn batch_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = common::write_toy_model(tmp.path(), 3);
    let images = tmp.path().join("images");
    common::write_images(&images, 50, &[]);
    let start = Instant::now();
    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let out = tmp.path().join(format!("results_{workers}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_agest"))
            .arg("batch")
            .arg(&images)
            .arg("--model")
            .arg(&model)
            .arg("--out")
            .arg(&out)
            .arg("--workers")
            .arg(workers.to_string())
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "batch with {workers} workers failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let elapsed = start.elapsed();
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    ensure!(rows == 50, "{rows} result rows");
    ensure!(outputs[0] == outputs[1], "1-worker and 4-worker results differ");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("50 images, identical files, {:.2} s", elapsed.as_secs_f64()))
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = common::write_toy_model(tmp.path(), 9);
    let est = Estimator::load(&model, None, EstimateOptions::default()).map_err(|e| e.to_string())?;
    let app = service::router(AppState::new(Some(est), JobStore::in_memory(), 2), None);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let png = common::synthetic_image(4).to_png();
        let (status, body) = call(&app, Request::post("/v1/estimate").body(Body::from(png)).unwrap()).await;
        ensure!(status == StatusCode::OK, "estimate status {status}");
        let r: EstimateResult = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let p = r.posterior.ok_or("no posterior")?;
        ensure!(p.probs().len() == 101, "posterior length {}", p.probs().len());
        let sum: f64 = p.probs().iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-6, "posterior sums to {sum}");
        ensure!(
            p.probs().iter().all(|v| (0.0..=1.0).contains(v)),
            "probability outside [0,1]"
        );

        let (status, body) = call(&app, Request::get("/v1/batch/job-424242").body(Body::empty()).unwrap()).await;
        let err: ErrorBody = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure!(
            status == StatusCode::NOT_FOUND && err.code == "unknown_job",
            "unknown job: {status} {}",
            err.code
        );

        let req = Request::post("/v1/estimate")
            .body(Body::from("definitely not an image"))
            .unwrap();
        let (status, body) = call(&app, req).await;
        let err: ErrorBody = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure!(
            status == StatusCode::BAD_REQUEST && err.code == "undecodable_image",
            "corrupt image: {status} {}",
            err.code
        );

        let images = common::write_images(&tmp.path().join("batch"), 5, &[]);
        let inputs: Vec<_> = images.iter().map(|p| serde_json::json!({ "path": p })).collect();
        let req = Request::post("/v1/batch")
            .header("content-type", "application/json")
            .body(Body::from(serde_json::json!({ "inputs": inputs }).to_string()))
            .unwrap();
        let (status, body) = call(&app, req).await;
        ensure!(status == StatusCode::ACCEPTED, "batch submit {status}");
        let job_id = serde_json::from_slice::<serde_json::Value>(&body).map_err(|e| e.to_string())?["job_id"]
            .as_str()
            .ok_or("no job_id")?
            .to_string();
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (_, body) = call(
                &app,
                Request::get(format!("/v1/batch/{job_id}")).body(Body::empty()).unwrap(),
            )
            .await;
            let job: BatchJob = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
            if job.status.is_terminal() {
                ensure!(job.status == JobStatus::Done, "job ended {:?}", job.status);
                ensure!(
                    job.progress.completed == 5 && job.progress.total == 5,
                    "progress {:?}",
                    job.progress
                );
                break;
            }
            ensure!(Instant::now() < deadline, "job did not finish");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        Ok("101-length posterior, 404 unknown_job, 400 undecodable_image, batch 5/5 done".into())
    })
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("convolution oracle", conv_oracle),
        ("forward-pass hand check", forward_hand_check),
        ("vgg-16 builder", vgg16_builder),
        ("softmax / dex suite", softmax_dex),
        ("metrics oracle", metrics_oracle),
        ("report fixture", report_fixture),
        ("dataset pipeline", dataset_pipeline),
        ("weight format", weight_format),
        ("batch determinism", batch_determinism),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
