//! Facial age estimation toolkit: a small CNN inference engine, expected-value
//! decoding of 101-class age posteriors, dataset curation and per-age-class
//! evaluation.

pub mod dataset;
pub mod dex;
pub mod metrics;
pub mod network;
pub mod plot;
pub mod preprocess;
pub mod tensor;

pub use dex::{AgeEstimate, AgePosterior};
pub use network::{LayerKind, LayerSpec, NetworkGraph};
pub use tensor::Tensor;
