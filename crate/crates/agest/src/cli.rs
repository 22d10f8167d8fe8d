//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 unreadable or invalid input,
//! 3 model could not be loaded.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use agest_core::dataset::{self, CollisionPolicy, DedupPolicy};
use agest_core::metrics::{self, ErrorMode};
use agest_core::network::{build_toy_age_net, build_vgg16_age, weights, GraphSpecFile};
use agest_core::preprocess::CropSpec;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::batch;
use crate::estimator::{EstimateError, EstimateOptions, Estimator, ModelError, MODEL_DIR_ENV};
use crate::jobs::JobStore;
use crate::service::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "agest", version, about = "Facial age estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the age of one image and print the expected age.
    Estimate(EstimateArgs),
    /// Estimate every image of a directory or manifest.
    Batch(BatchArgs),
    /// Per-age-class evaluation of a predictions CSV.
    Eval(EvalArgs),
    /// Dataset curation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write a randomly initialised model and its graph spec.
    InitModel(InitModelArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Weight file; defaults to $AGEST_MODEL_DIR/model.agew.
    #[arg(long, env = MODEL_DIR_ENV, hide_env = true, value_parser = model_from_env_or_path)]
    pub model: Option<PathBuf>,
    /// Graph spec TOML; defaults to the weight path with a .toml extension.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Age below which posterior mass counts towards p_minor.
    #[arg(long, default_value_t = agest_core::dex::DEFAULT_BOUNDARY_AGE)]
    pub boundary_age: u32,
}

/// `--model` is a file; the environment fallback names a directory.
fn model_from_env_or_path(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    Ok(if p.is_dir() {
        p.join(crate::estimator::MODEL_FILE)
    } else {
        p
    })
}

impl ModelArgs {
    fn load(&self) -> Result<Estimator, CliError> {
        let model = Estimator::resolve_model_path(self.model.as_deref())?;
        let options = EstimateOptions {
            boundary_age: self.boundary_age,
            ..EstimateOptions::default()
        };
        Ok(Estimator::load(&model, self.spec.as_deref(), options)?)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub image: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write the posterior chart (SVG, with a .csv sidecar).
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Print the full result as JSON instead of a single number.
    #[arg(long)]
    pub json: bool,
    /// Crop rectangle `x,y,w,h` or `x,y,w,h,rotation_deg`.
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<CropSpec>,
    /// Ground-truth age, drawn as the actual bar in the plot.
    #[arg(long)]
    pub real_age: Option<u32>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Directory of images or manifest CSV.
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `subject_id,real_age,estimated_age` rows (manifest input).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the full results as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with `subject_id,real_age,estimated_age`.
    pub predictions: PathBuf,
    /// Output directory for report.csv, report.json and plots.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_CS_LEVELS)]
    pub cs_levels: Vec<u32>,
    /// Round estimates to whole years before scoring.
    #[arg(long)]
    pub rounded: bool,
    /// Also write MAE and CS plots.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Build a manifest from `name_parts_age.ext` file names.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source tag recorded on every row; defaults to the directory name.
        #[arg(long)]
        source: Option<String>,
        /// Rejected files CSV.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Keep one record per subject.
    Dedup {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Random pick seed; without it the first file name is kept.
        #[arg(long)]
        seed: Option<u64>,
        /// Discard records older than this before picking.
        #[arg(long)]
        max_age: Option<u32>,
    },
    /// Union of two manifests.
    Merge {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Collision::Error)]
        on_collision: Collision,
    },
    /// Age histogram CSV and diversity score.
    Stats {
        manifest: PathBuf,
        /// Histogram CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        bin_width: u32,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Collision {
    Error,
    PreferA,
    PreferB,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Append-only job journal, replayed on start.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Static files served under `/` (the triage UI build).
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Toy,
    Vgg16,
}

#[derive(Debug, Args)]
pub struct InitModelArgs {
    /// Weight file; the spec is written next to it with a .toml extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Arch::Toy)]
    pub arch: Arch,
    /// Input side length of the toy network.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_crop(s: &str) -> Result<CropSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 && parts.len() != 5 {
        return Err("expected x,y,w,h or x,y,w,h,rotation_deg".into());
    }
    let int = |i: usize| parts[i].parse::<u32>().map_err(|e| format!("{:?}: {e}", parts[i]));
    Ok(CropSpec {
        x: int(0)?,
        y: int(1)?,
        w: int(2)?,
        h: int(3)?,
        rotation_deg: match parts.get(4) {
            Some(r) => r.parse().map_err(|e| format!("{r:?}: {e}"))?,
            None => 0.0,
        },
    })
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Model(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Model(_) => EXIT_MODEL,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Model(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Inference(_) => CliError::Other(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn input_err(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn other_err(e: impl fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Estimate(a) => estimate(a),
        Command::Batch(a) => batch(a),
        Command::Eval(a) => eval(a),
        Command::Dataset(c) => dataset(c),
        Command::Serve(a) => serve(a),
        Command::InitModel(a) => init_model(a),
    }
}

fn estimate(a: EstimateArgs) -> Result<(), CliError> {
    let est = a.model.load()?;
    let result = est.estimate_file(&a.image, a.crop.as_ref())?;
    if let Some(plot) = &a.plot {
        let posterior = result.posterior.as_ref().expect("estimates carry the posterior");
        let doc = agest_core::dex::posterior_plot(posterior, result.predicted_age(), a.real_age);
        write_file(plot, &doc.svg)?;
        write_file(&plot.with_extension("csv"), &doc.csv)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&result).map_err(other_err)?);
    } else {
        println!("{:.2}", result.expected_age);
    }
    Ok(())
}

fn batch(a: BatchArgs) -> Result<(), CliError> {
    let inputs = batch::collect_inputs(&a.input).map_err(input_err)?;
    let est = a.model.load()?;
    let out = batch::run_batch(&est, &inputs, a.workers, |i, o| {
        if let Some(e) = &o.error {
            log::warn!("item {i} ({}): {}", o.path, e.message);
        }
    })
    .map_err(other_err)?;
    write_file(&a.out, batch::results_csv(&out))?;
    if let Some(p) = &a.predictions {
        write_file(p, batch::predictions_csv(&out))?;
    }
    if let Some(p) = &a.json {
        write_file(p, serde_json::to_string_pretty(&out).map_err(other_err)?)?;
    }
    let summary = batch::summarize(&out);
    println!("{summary}");
    if summary.succeeded == 0 {
        return Err(CliError::Input(format!(
            "no image in {} could be processed",
            a.input.display()
        )));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let file = fs::File::open(&a.predictions)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.predictions.display())))?;
    let records =
        metrics::read_predictions(file).map_err(|e| CliError::Input(format!("{}: {e}", a.predictions.display())))?;
    let mode = if a.rounded {
        ErrorMode::Rounded
    } else {
        ErrorMode::Continuous
    };
    let report = metrics::build_report_with(&records, &a.cs_levels, mode).map_err(input_err)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Other(format!("cannot create {}: {e}", a.out.display())))?;
    let csv = report.to_csv();
    write_file(&a.out.join("report.csv"), &csv)?;
    write_file(&a.out.join("report.json"), report.to_json())?;
    if a.plot {
        let mae = report.plot_mae().map_err(other_err)?;
        write_file(&a.out.join("mae.svg"), &mae.svg)?;
        write_file(&a.out.join("mae.csv"), &mae.csv)?;
        for &l in &report.cs_levels {
            let cs = report.plot_cs(l).map_err(other_err)?;
            write_file(&a.out.join(format!("cs{l}.svg")), &cs.svg)?;
            write_file(&a.out.join(format!("cs{l}.csv")), &cs.csv)?;
        }
    }
    print!("{csv}");
    Ok(())
}

fn read_manifest(path: &Path) -> Result<dataset::DatasetManifest, CliError> {
    dataset::read_manifest_file(path).map_err(input_err)
}

fn dataset(c: DatasetCommand) -> Result<(), CliError> {
    match c {
        DatasetCommand::Ingest {
            dir,
            out,
            source,
            rejects,
        } => {
            let tag = source.unwrap_or_else(|| {
                dir.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into())
            });
            let res = dataset::ingest_directory(&dir, &tag).map_err(input_err)?;
            dataset::write_manifest_file(&res.manifest, &out).map_err(other_err)?;
            if let Some(path) = &rejects {
                let f = fs::File::create(path)
                    .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
                dataset::write_rejects(&res.rejects, f).map_err(other_err)?;
            }
            for r in &res.rejects {
                log::warn!("rejected {}: {}", r.file_path.display(), r.reason);
            }
            println!("{} records, {} rejected", res.manifest.len(), res.rejects.len());
        }
        DatasetCommand::Dedup {
            manifest,
            out,
            seed,
            max_age,
        } => {
            let m = read_manifest(&manifest)?;
            let policy = seed.map_or(DedupPolicy::KeepFirstSorted, DedupPolicy::RandomSeeded);
            let res = dataset::dedup(&m, policy, max_age);
            dataset::write_manifest_file(&res.manifest, &out).map_err(other_err)?;
            println!(
                "{} records -> {} subjects, {} subjects dropped",
                m.len(),
                res.manifest.len(),
                res.dropped_subjects.len()
            );
        }
        DatasetCommand::Merge {
            a,
            b,
            out,
            on_collision,
        } => {
            let policy = match on_collision {
                Collision::Error => CollisionPolicy::Error,
                Collision::PreferA => CollisionPolicy::PreferA,
                Collision::PreferB => CollisionPolicy::PreferB,
            };
            let merged = dataset::merge(&read_manifest(&a)?, &read_manifest(&b)?, policy).map_err(other_err)?;
            dataset::write_manifest_file(&merged, &out).map_err(other_err)?;
            println!("{} records", merged.len());
        }
        DatasetCommand::Stats {
            manifest,
            out,
            bin_width,
            json,
        } => {
            if bin_width == 0 {
                return Err(CliError::Input("--bin-width must be positive".into()));
            }
            let m = read_manifest(&manifest)?;
            let hist = dataset::age_histogram(&m, bin_width);
            let diversity = dataset::diversity_score(&m).map_err(input_err)?;
            let mut csv = String::from("age_bin,count\n");
            for (bin, n) in &hist {
                csv.push_str(&format!("{bin},{n}\n"));
            }
            match &out {
                Some(p) => write_file(p, &csv)?,
                None if !json => print!("{csv}"),
                None => {}
            }
            if json {
                let doc = serde_json::json!({
                    "schema_version": crate::estimator::SCHEMA_VERSION,
                    "records": m.len(),
                    "subjects": m.subjects().len(),
                    "diversity": diversity,
                    "histogram": hist.iter().map(|(b, n)| serde_json::json!({"age_bin": b, "count": n})).collect::<Vec<_>>(),
                });
                println!("{}", serde_json::to_string_pretty(&doc).map_err(other_err)?);
            } else {
                println!(
                    "records {}, subjects {}, diversity {diversity:.4}",
                    m.len(),
                    m.subjects().len()
                );
            }
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let estimator = match a.model.load() {
        Ok(e) => Some(e),
        Err(CliError::Model(m)) if a.model.model.is_none() => {
            log::warn!("{m}; estimation endpoints will answer 503");
            None
        }
        Err(e) => return Err(e),
    };
    let jobs = match &a.journal {
        Some(p) => JobStore::open(p).map_err(other_err)?,
        None => JobStore::in_memory(),
    };
    let app = service::router(AppState::new(estimator, jobs, a.workers), a.ui_dir);
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Input(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Runtime::new().map_err(other_err)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Other(format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(other_err)
    })
}

fn init_model(a: InitModelArgs) -> Result<(), CliError> {
    let mut graph = match a.arch {
        Arch::Toy => build_toy_age_net(a.side, agest_core::dex::AGE_CLASSES),
        Arch::Vgg16 => build_vgg16_age(agest_core::dex::AGE_CLASSES),
    }
    .map_err(input_err)?;
    graph.randomize_weights(a.seed);
    weights::save_weights(&graph, &a.out).map_err(other_err)?;
    let spec_path = a.out.with_extension("toml");
    GraphSpecFile::from_graph(&graph, None)
        .write(&spec_path)
        .map_err(other_err)?;
    println!(
        "wrote {} ({} parameters) and {}",
        a.out.display(),
        graph.parameter_count(),
        spec_path.display()
    );
    Ok(())
}
