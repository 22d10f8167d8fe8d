//! CLI, batch runner and HTTP service for the age estimation toolkit.

pub mod batch;
pub mod cli;
pub mod estimator;
pub mod jobs;
pub mod service;

pub use batch::{BatchInput, ItemOutcome};
pub use estimator::{EstimateOptions, EstimateResult, Estimator};
pub use jobs::{BatchJob, JobStatus, JobStore, ReviewState};
