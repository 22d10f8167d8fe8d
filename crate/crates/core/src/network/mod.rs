//! Layer graphs and forward-pass execution.
//!
//! A [`NetworkGraph`] is an ordered list of [`LayerSpec`]s plus the weight
//! blobs of its parameterised layers. Construction runs shape propagation
//! from the declared input shape, so a graph that exists is always
//! shape-consistent; only the presence of weights is checked lazily.

mod spec_file;
mod vgg;
pub mod weights;

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, ConvParams, Tensor, TensorError};

pub use spec_file::GraphSpecFile;
pub use vgg::{build_toy_age_net, build_vgg16_age, VGG16_INPUT};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
    #[error("layer {layer:?}: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("layer {layer:?} cannot accept input of shape {shape:?}: {source}")]
    Shape {
        layer: String,
        shape: Vec<usize>,
        #[source]
        source: TensorError,
    },
    #[error("layer {0:?} has no weights loaded")]
    MissingWeights(String),
    #[error("layer {layer:?}: expected {blob} shape {expected:?}, found {found:?}")]
    WeightShape {
        layer: String,
        blob: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no parameterised layer named {0:?}")]
    UnknownLayer(String),
    #[error("input shape {found:?} does not match graph input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("num_classes must be at least 2, got {0}")]
    NumClasses(usize),
    #[error("graph spec: {0}")]
    SpecFile(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        #[serde(default = "unit_pair")]
        stride: (usize, usize),
        #[serde(default)]
        padding: (usize, usize),
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    Relu,
    Flatten,
    FullyConnected {
        out_features: usize,
    },
    Softmax,
}

fn unit_pair() -> (usize, usize) {
    (1, 1)
}

impl LayerKind {
    pub fn is_parameterised(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::FullyConnected { .. })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |what: &str, v: (usize, usize)| {
            if v.0 == 0 || v.1 == 0 {
                Err(format!("{what} must be positive, got {v:?}"))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if out_channels == 0 {
                    return Err("out_channels must be positive".into());
                }
                positive("kernel", kernel)?;
                positive("stride", stride)
            }
            LayerKind::MaxPool { window, stride } => {
                positive("window", window)?;
                positive("stride", stride)
            }
            LayerKind::FullyConnected { out_features: 0 } => Err("out_features must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(name: impl Into<String>, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv {
                out_channels,
                kernel: (kernel, kernel),
                stride: (1, 1),
                padding: (padding, padding),
            },
        )
    }

    pub fn max_pool(name: impl Into<String>, window: usize, stride: usize) -> Self {
        Self::new(
            name,
            LayerKind::MaxPool {
                window: (window, window),
                stride: (stride, stride),
            },
        )
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Flatten)
    }

    pub fn fully_connected(name: impl Into<String>, out_features: usize) -> Self {
        Self::new(name, LayerKind::FullyConnected { out_features })
    }

    pub fn softmax(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Softmax)
    }
}

/// Weight and bias of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    // Per-layer output shapes, computed once at construction.
    shapes: Vec<Vec<usize>>,
    weights: BTreeMap<String, LayerWeights>,
}

impl NetworkGraph {
    /// Builds an unweighted graph, checking names, hyperparameters and shape
    /// propagation.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NetworkError::InvalidLayer {
                layer: "<input>".into(),
                reason: format!("invalid input shape {input_shape:?}"),
            });
        }
        let mut seen = HashSet::new();
        for layer in &layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(NetworkError::DuplicateName(layer.name.clone()));
            }
            if layer.name.is_empty() {
                return Err(NetworkError::InvalidLayer {
                    layer: String::new(),
                    reason: "empty layer name".into(),
                });
            }
            layer.kind.validate().map_err(|reason| NetworkError::InvalidLayer {
                layer: layer.name.clone(),
                reason,
            })?;
        }

        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for layer in &layers {
            current = propagate(layer, &current)?;
            shapes.push(current.clone());
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            weights: BTreeMap::new(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s)
    }

    fn input_of(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input_shape
        } else {
            &self.shapes[index - 1]
        }
    }

    /// Expected `(weight, bias)` shapes of every parameterised layer, in
    /// layer order.
    pub fn parameter_shapes(&self) -> Vec<(&str, Vec<usize>, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| {
                let input = self.input_of(i);
                match layer.kind {
                    LayerKind::Conv {
                        out_channels, kernel, ..
                    } => Some((
                        layer.name.as_str(),
                        vec![out_channels, input[0], kernel.0, kernel.1],
                        vec![out_channels],
                    )),
                    LayerKind::FullyConnected { out_features } => {
                        Some((layer.name.as_str(), vec![out_features, input[0]], vec![out_features]))
                    }
                    _ => None,
                }
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    pub fn weights(&self, layer: &str) -> Option<&LayerWeights> {
        self.weights.get(layer)
    }

    /// Installs weights for `layer` after checking both blob shapes.
    pub fn set_weights(&mut self, layer: &str, weight: Tensor, bias: Tensor) -> Result<()> {
        let (_, w_shape, b_shape) = self
            .parameter_shapes()
            .into_iter()
            .find(|(name, _, _)| *name == layer)
            .ok_or_else(|| NetworkError::UnknownLayer(layer.to_string()))?;
        if weight.shape() != w_shape.as_slice() {
            return Err(NetworkError::WeightShape {
                layer: layer.into(),
                blob: "weight",
                expected: w_shape,
                found: weight.shape().to_vec(),
            });
        }
        if bias.shape() != b_shape.as_slice() {
            return Err(NetworkError::WeightShape {
                layer: layer.into(),
                blob: "bias",
                expected: b_shape,
                found: bias.shape().to_vec(),
            });
        }
        self.weights.insert(layer.to_string(), LayerWeights { weight, bias });
        Ok(())
    }

    pub fn is_fully_weighted(&self) -> bool {
        self.layers
            .iter()
            .filter(|l| l.kind.is_parameterised())
            .all(|l| self.weights.contains_key(&l.name))
    }

    /// Name of the first parameterised layer without weights.
    pub fn first_unweighted(&self) -> Option<&str> {
        self.layers
            .iter()
            .find(|l| l.kind.is_parameterised() && !self.weights.contains_key(&l.name))
            .map(|l| l.name.as_str())
    }

    /// Same topology, no weights.
    pub fn without_weights(&self) -> Self {
        Self {
            weights: BTreeMap::new(),
            ..self.clone()
        }
    }

    /// Fills every parameterised layer with He-uniform weights and small
    /// biases from a seeded generator. Used for synthetic models and tests.
    pub fn randomize_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<(String, Vec<usize>, Vec<usize>)> = self
            .parameter_shapes()
            .into_iter()
            .map(|(n, w, b)| (n.to_string(), w, b))
            .collect();
        for (name, w_shape, b_shape) in params {
            let fan_in: usize = w_shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt() as f32;
            let w: Vec<f32> = (0..w_shape.iter().product::<usize>())
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let b: Vec<f32> = (0..b_shape[0]).map(|_| rng.random_range(-0.1..=0.1)).collect();
            let weights = LayerWeights {
                weight: Tensor::new(w_shape, w).expect("shape from spec"),
                bias: Tensor::new(b_shape, b).expect("shape from spec"),
            };
            self.weights.insert(name, weights);
        }
    }

    /// Runs every layer in order.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.run(input, self.layers.len())
    }

    /// Runs every layer except a trailing softmax, returning raw logits.
    /// Graphs without a final softmax behave like [`forward`](Self::forward).
    pub fn forward_logits(&self, input: &Tensor) -> Result<Tensor> {
        let end = match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Softmax,
                ..
            }) => self.layers.len() - 1,
            _ => self.layers.len(),
        };
        self.run(input, end)
    }

    fn run(&self, input: &Tensor, end: usize) -> Result<Tensor> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NetworkError::InputShape {
                expected: self.input_shape.clone(),
                found: input.shape().to_vec(),
            });
        }
        let mut x = input.clone();
        for layer in &self.layers[..end] {
            x = self.apply(layer, &x)?;
        }
        Ok(x)
    }

    fn apply(&self, layer: &LayerSpec, x: &Tensor) -> Result<Tensor> {
        let shape_err = |source| NetworkError::Shape {
            layer: layer.name.clone(),
            shape: x.shape().to_vec(),
            source,
        };
        let weights = || {
            self.weights
                .get(&layer.name)
                .ok_or_else(|| NetworkError::MissingWeights(layer.name.clone()))
        };
        match layer.kind {
            LayerKind::Conv { stride, padding, .. } => {
                let lw = weights()?;
                let params = ConvParams::new(&lw.weight)
                    .with_bias(&lw.bias)
                    .with_stride(stride)
                    .with_padding(padding);
                tensor::conv2d(x, &params).map_err(shape_err)
            }
            LayerKind::MaxPool { window, stride } => tensor::max_pool(x, window, stride).map_err(shape_err),
            LayerKind::Relu => Ok(tensor::relu(x)),
            LayerKind::Flatten => Ok(tensor::flatten(x)),
            LayerKind::FullyConnected { .. } => {
                let lw = weights()?;
                tensor::fully_connected(x, &lw.weight, &lw.bias).map_err(shape_err)
            }
            LayerKind::Softmax => tensor::softmax(x).map_err(shape_err),
        }
    }
}

fn propagate(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let err = |source| NetworkError::Shape {
        layer: layer.name.clone(),
        shape: input.to_vec(),
        source,
    };
    let rank_err = |expected| {
        err(TensorError::Rank {
            op: "shape propagation",
            expected,
            actual: input.to_vec(),
        })
    };
    match layer.kind {
        LayerKind::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let [_, h, w] = input[..] else {
                return Err(rank_err("rank-3 [C,H,W]"));
            };
            let window = || {
                err(TensorError::Window {
                    op: "conv2d",
                    window: kernel,
                    input: (h + 2 * padding.0, w + 2 * padding.1),
                })
            };
            let ho = tensor::output_dim(h, kernel.0, stride.0, padding.0).ok_or_else(window)?;
            let wo = tensor::output_dim(w, kernel.1, stride.1, padding.1).ok_or_else(window)?;
            Ok(vec![out_channels, ho, wo])
        }
        LayerKind::MaxPool { window, stride } => {
            let [c, h, w] = input[..] else {
                return Err(rank_err("rank-3 [C,H,W]"));
            };
            let fit = || {
                err(TensorError::Window {
                    op: "max_pool",
                    window,
                    input: (h, w),
                })
            };
            let ho = tensor::output_dim(h, window.0, stride.0, 0).ok_or_else(fit)?;
            let wo = tensor::output_dim(w, window.1, stride.1, 0).ok_or_else(fit)?;
            Ok(vec![c, ho, wo])
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::FullyConnected { out_features } => {
            if input.len() != 1 {
                return Err(rank_err("rank-1 input (flatten first)"));
            }
            Ok(vec![out_features])
        }
        LayerKind::Softmax => {
            if input.len() != 1 {
                return Err(rank_err("rank-1 logits"));
            }
            Ok(input.to_vec())
        }
    }
}
