//! Expected-value decoding of per-year age posteriors.
//!
//! The network's 101 softmax outputs are read as a distribution over the
//! integer ages 0..=100. The headline estimate is the expectation of that
//! distribution; the argmax, the top-k alternatives, an entropy-based
//! confidence and the mass below a legal age boundary are reported next to
//! it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plot::{self, BarRole, PlotDocument};
use crate::tensor;

/// Number of age classes, one per year from 0 to 100.
pub const AGE_CLASSES: usize = 101;
pub const MAX_AGE: u32 = 100;
pub const DEFAULT_BOUNDARY_AGE: u32 = 18;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DexError {
    #[error("invalid age posterior: {0}")]
    InvalidPosterior(String),
    #[error("top-k requires 1 <= k <= {AGE_CLASSES}, got {0}")]
    TopK(usize),
    #[error("boundary age must be within 0..={MAX_AGE}, got {0}")]
    BoundaryAge(u32),
    #[error("age {0} is outside 0..={MAX_AGE}")]
    Age(u32),
}

pub type Result<T> = std::result::Result<T, DexError>;

/// Probabilities over ages 0..=100; index `i` is age `i` years.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AgePosterior(Vec<f64>);

impl AgePosterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != AGE_CLASSES {
            return Err(DexError::InvalidPosterior(format!(
                "expected {AGE_CLASSES} probabilities, got {}",
                probs.len()
            )));
        }
        if let Some((age, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(DexError::InvalidPosterior(format!(
                "probability {p} at age {age} is outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DexError::InvalidPosterior(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Softmax of raw network outputs.
    pub fn from_logits(logits: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = logits.iter().map(|&v| f64::from(v)).collect();
        let probs = tensor::softmax_f64(&wide).map_err(|e| DexError::InvalidPosterior(e.to_string()))?;
        Self::new(probs)
    }

    /// Normalises arbitrary non-negative scores.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let total: f64 = scores.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(DexError::InvalidPosterior(format!(
                "score total {total} is not positive"
            )));
        }
        Self::new(scores.iter().map(|s| s / total).collect())
    }

    pub fn one_hot(age: u32) -> Result<Self> {
        if age > MAX_AGE {
            return Err(DexError::Age(age));
        }
        let mut p = vec![0.0; AGE_CLASSES];
        p[age as usize] = 1.0;
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self(vec![1.0 / AGE_CLASSES as f64; AGE_CLASSES])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, age: u32) -> f64 {
        self.0.get(age as usize).copied().unwrap_or(0.0)
    }
}

impl<'de> Deserialize<'de> for AgePosterior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        AgePosterior::new(probs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeProb {
    pub age: u32,
    pub prob: f64,
}

/// Everything decoded from one posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeEstimate {
    pub expected_age: f64,
    pub argmax_age: u32,
    pub top_k: Vec<AgeProb>,
    pub confidence: f64,
    pub p_minor: f64,
    pub boundary_age: u32,
}

/// `sum_i i * p_i`, clamped to `[0, 100]`.
pub fn expected_age(p: &AgePosterior) -> f64 {
    let mean: f64 = p.0.iter().enumerate().map(|(age, &pr)| age as f64 * pr).sum();
    mean.clamp(0.0, MAX_AGE as f64)
}

/// Most probable age; the youngest wins ties.
pub fn argmax_age(p: &AgePosterior) -> u32 {
    let mut best = 0;
    for (age, &pr) in p.0.iter().enumerate() {
        if pr > p.0[best] {
            best = age;
        }
    }
    best as u32
}

/// The `k` most probable ages in descending probability, ties broken by the
/// lower age.
pub fn top_k(p: &AgePosterior, k: usize) -> Result<Vec<AgeProb>> {
    if k == 0 || k > AGE_CLASSES {
        return Err(DexError::TopK(k));
    }
    let mut ages: Vec<usize> = (0..AGE_CLASSES).collect();
    ages.sort_by(|&a, &b| p.0[b].total_cmp(&p.0[a]).then(a.cmp(&b)));
    Ok(ages
        .into_iter()
        .take(k)
        .map(|age| AgeProb {
            age: age as u32,
            prob: p.0[age],
        })
        .collect())
}

/// `1 - H(p) / ln(101)` with natural-log entropy and `0 ln 0 = 0`. One for
/// a one-hot posterior, zero for a uniform one.
pub fn confidence(p: &AgePosterior) -> f64 {
    let entropy: f64 = p.0.iter().filter(|&&pr| pr > 0.0).map(|&pr| -pr * pr.ln()).sum();
    (1.0 - entropy / (AGE_CLASSES as f64).ln()).clamp(0.0, 1.0)
}

/// Posterior mass strictly below `boundary_age`.
pub fn p_minor(p: &AgePosterior, boundary_age: u32) -> Result<f64> {
    if boundary_age > MAX_AGE {
        return Err(DexError::BoundaryAge(boundary_age));
    }
    let mass: f64 = p.0[..boundary_age as usize].iter().sum();
    Ok(mass.clamp(0.0, 1.0))
}

pub fn estimate(p: &AgePosterior, k: usize, boundary_age: u32) -> Result<AgeEstimate> {
    Ok(AgeEstimate {
        expected_age: expected_age(p),
        argmax_age: argmax_age(p),
        top_k: top_k(p, k)?,
        confidence: confidence(p),
        p_minor: p_minor(p, boundary_age)?,
        boundary_age,
    })
}

/// Bar chart of the posterior. The `predicted` bar is drawn in the
/// "predicted" role (red) and `real_age`, when given, in the "actual" role
/// (green). When both coincide the bar takes the "actual" role.
pub fn posterior_plot(p: &AgePosterior, predicted: u32, real_age: Option<u32>) -> PlotDocument {
    let roles: Vec<BarRole> = (0..AGE_CLASSES as u32)
        .map(|age| {
            if Some(age) == real_age {
                BarRole::Actual
            } else if age == predicted {
                BarRole::Predicted
            } else {
                BarRole::None
            }
        })
        .collect();
    let title = match real_age {
        Some(real) => format!("Age posterior: predicted {predicted}, actual {real}"),
        None => format!("Age posterior: predicted {predicted}"),
    };
    plot::bar_chart(&title, &p.0, &roles).expect("posterior has 101 finite values")
}
