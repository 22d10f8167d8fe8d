//! Human-readable graph description stored next to a weight file.
//!
//! ```toml
//! input_shape = [3, 224, 224]
//! channel_means = [0.0, 0.0, 0.0]   # optional, consumed by preprocessing
//!
//! [[layers]]
//! name = "conv1_1"
//! kind = "conv"
//! out_channels = 64
//! kernel = [3, 3]
//! stride = [1, 1]
//! padding = [1, 1]
//!
//! [[layers]]
//! name = "relu1_1"
//! kind = "relu"
//! ```
//!
//! Layer kinds: `conv`, `maxpool`, `relu`, `flatten`, `fully_connected`,
//! `softmax`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, NetworkError, NetworkGraph, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpecFile {
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_means: Option<Vec<f32>>,
    pub layers: Vec<LayerSpec>,
}

impl GraphSpecFile {
    pub fn from_graph(graph: &NetworkGraph, channel_means: Option<Vec<f32>>) -> Self {
        Self {
            input_shape: graph.input_shape().to_vec(),
            channel_means,
            layers: graph.layers().to_vec(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| NetworkError::SpecFile(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NetworkError::SpecFile(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("graph spec is always representable as TOML")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| NetworkError::SpecFile(format!("{}: {e}", path.display())))
    }

    /// Validated, unweighted graph.
    pub fn to_graph(&self) -> Result<NetworkGraph> {
        NetworkGraph::new(self.input_shape.clone(), self.layers.clone())
    }
}
