//! Image-to-estimate pipeline around a loaded model.

use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use agest_core::dex::{self, AgeEstimate, AgePosterior, AgeProb, AGE_CLASSES, DEFAULT_BOUNDARY_AGE};
use agest_core::network::weights::{self, WeightError};
use agest_core::network::{GraphSpecFile, NetworkError, NetworkGraph};
use agest_core::preprocess::{self, Colorcast, CropSpec, PreprocessConfig, PreprocessError, RawImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version stamped on every JSON document the tool emits.
pub const SCHEMA_VERSION: u32 = 1;

pub const MODEL_DIR_ENV: &str = "AGEST_MODEL_DIR";
pub const MODEL_FILE: &str = "model.agew";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no model given: pass --model or set {MODEL_DIR_ENV}")]
    NotConfigured,
    #[error("model {path}: {source}")]
    Weights {
        path: PathBuf,
        #[source]
        source: WeightError,
    },
    #[error("graph spec {path}: {source}")]
    Spec {
        path: PathBuf,
        #[source]
        source: Box<NetworkError>,
    },
    #[error("model/spec mismatch: {0}")]
    Incompatible(String),
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] PreprocessError),
    #[error("inference failed: {0}")]
    Inference(String),
}

impl EstimateError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            EstimateError::Read { .. } => "unreadable_input",
            EstimateError::Image(PreprocessError::Decode { .. }) => "undecodable_image",
            EstimateError::Image(_) => "invalid_crop",
            EstimateError::Inference(_) => "inference_failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub top_k: usize,
    pub boundary_age: u32,
    /// Confidence below which a posterior is reported as flat.
    pub flat_threshold: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            top_k: 3,
            boundary_age: DEFAULT_BOUNDARY_AGE,
            flat_threshold: 0.3,
        }
    }
}

/// One processed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub schema_version: u32,
    pub path: String,
    pub expected_age: f64,
    pub argmax_age: u32,
    pub top_k: Vec<AgeProb>,
    pub confidence: f64,
    pub p_minor: f64,
    pub boundary_age: u32,
    pub flat_distribution: bool,
    pub colorcast: Colorcast,
    pub file_size: u64,
    pub modified_ts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<AgePosterior>,
}

impl EstimateResult {
    /// Age drawn as the "predicted" bar in posterior plots.
    pub fn predicted_age(&self) -> u32 {
        self.expected_age.round() as u32
    }
}

pub struct Estimator {
    graph: NetworkGraph,
    preprocess: PreprocessConfig,
    options: EstimateOptions,
}

impl Estimator {
    pub fn new(
        graph: NetworkGraph,
        preprocess: PreprocessConfig,
        options: EstimateOptions,
    ) -> Result<Self, ModelError> {
        if let Some(layer) = graph.first_unweighted() {
            return Err(ModelError::Incompatible(format!("layer {layer:?} has no weights")));
        }
        match graph.input_shape() {
            [3, h, w] if *h > 0 && *w > 0 => {}
            other => {
                return Err(ModelError::Incompatible(format!(
                    "graph input {other:?} is not an RGB [3, H, W] image"
                )))
            }
        }
        if options.top_k == 0 || options.top_k > AGE_CLASSES {
            return Err(ModelError::Incompatible(format!(
                "top-k {} outside 1..={AGE_CLASSES}",
                options.top_k
            )));
        }
        if options.boundary_age > dex::MAX_AGE {
            return Err(ModelError::Incompatible(format!(
                "boundary age {} outside 0..={}",
                options.boundary_age,
                dex::MAX_AGE
            )));
        }
        if graph.output_shape() != [AGE_CLASSES] {
            return Err(ModelError::Incompatible(format!(
                "graph output {:?} is not {AGE_CLASSES} age classes",
                graph.output_shape()
            )));
        }
        Ok(Self {
            graph,
            preprocess,
            options,
        })
    }

    /// Loads a weight file and its graph spec. The spec defaults to the
    /// weight path with a `.toml` extension.
    pub fn load(model: &Path, spec: Option<&Path>, options: EstimateOptions) -> Result<Self, ModelError> {
        let spec_path = spec.map_or_else(|| model.with_extension("toml"), Path::to_path_buf);
        let spec_file = GraphSpecFile::read(&spec_path).map_err(|source| ModelError::Spec {
            path: spec_path.clone(),
            source: Box::new(source),
        })?;
        let graph = spec_file.to_graph().map_err(|source| ModelError::Spec {
            path: spec_path.clone(),
            source: Box::new(source),
        })?;
        let graph = weights::load_weights_file(&graph, model).map_err(|source| ModelError::Weights {
            path: model.to_path_buf(),
            source,
        })?;
        let preprocess = match &spec_file.channel_means {
            Some(means) => PreprocessConfig::with_means(means).map_err(|e| ModelError::Incompatible(e.to_string()))?,
            None => PreprocessConfig::default(),
        };
        Self::new(graph, preprocess, options)
    }

    /// Resolves `--model`, falling back to `$AGEST_MODEL_DIR/model.agew`.
    pub fn resolve_model_path(explicit: Option<&Path>) -> Result<PathBuf, ModelError> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        match std::env::var_os(MODEL_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Ok(PathBuf::from(dir).join(MODEL_FILE)),
            _ => Err(ModelError::NotConfigured),
        }
    }

    pub fn options(&self) -> &EstimateOptions {
        &self.options
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    fn target(&self) -> (u32, u32) {
        let s = self.graph.input_shape();
        (s[2] as u32, s[1] as u32)
    }

    pub fn posterior(&self, img: &RawImage, crop: Option<&CropSpec>) -> Result<AgePosterior, EstimateError> {
        let full = CropSpec::full(img);
        let input = preprocess::crop_resize(img, crop.unwrap_or(&full), self.target(), &self.preprocess)?;
        let logits = self
            .graph
            .forward_logits(&input)
            .map_err(|e| EstimateError::Inference(e.to_string()))?;
        AgePosterior::from_logits(logits.data()).map_err(|e| EstimateError::Inference(e.to_string()))
    }

    pub fn decode(&self, posterior: &AgePosterior) -> AgeEstimate {
        dex::estimate(posterior, self.options.top_k, self.options.boundary_age)
            .expect("options validated at construction")
    }

    /// Full pipeline on in-memory bytes. `label` becomes the result path.
    pub fn estimate_bytes(
        &self,
        label: &str,
        bytes: &[u8],
        crop: Option<&CropSpec>,
    ) -> Result<EstimateResult, EstimateError> {
        let img = preprocess::decode(bytes)?;
        let posterior = self.posterior(&img, crop)?;
        let est = self.decode(&posterior);
        Ok(EstimateResult {
            schema_version: SCHEMA_VERSION,
            path: label.to_string(),
            expected_age: est.expected_age,
            argmax_age: est.argmax_age,
            top_k: est.top_k,
            confidence: est.confidence,
            p_minor: est.p_minor,
            boundary_age: est.boundary_age,
            flat_distribution: est.confidence < self.options.flat_threshold,
            colorcast: preprocess::detect_colorcast(&img),
            file_size: bytes.len() as u64,
            modified_ts: None,
            posterior: Some(posterior),
        })
    }

    /// Full pipeline on a file, adding its size and modification time.
    pub fn estimate_file(&self, path: &Path, crop: Option<&CropSpec>) -> Result<EstimateResult, EstimateError> {
        let read_err = |source| EstimateError::Read {
            path: path.to_path_buf(),
            source,
        };
        let bytes = std::fs::read(path).map_err(read_err)?;
        let meta = std::fs::metadata(path).map_err(read_err)?;
        let mut result = self.estimate_bytes(&path.to_string_lossy(), &bytes, crop)?;
        result.file_size = meta.len();
        result.modified_ts = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_secs());
        Ok(result)
    }
}
