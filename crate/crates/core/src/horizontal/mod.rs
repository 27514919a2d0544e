//! Horizontal federated training: models, local SGD, FedAvg / FedProx /
//! Scaffold aggregation and the secure-aggregation message codec.

mod model;
mod sim;
mod train;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::NumericError;
use crate::secagg::SecAggError;

pub use model::{Architecture, ModelKind};
pub use sim::{decode_secure_sum, encode_secure_update, simulate_federation, SecureSum, SimRound};
pub use train::{local_train, mix_seed, LocalUpdate, Samples, ScaffoldCorrection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HorizontalError {
    #[error("no training samples")]
    EmptyData,
    #[error("model layout mismatch")]
    LayoutMismatch,
    #[error("non-finite loss at party {party}, round {round}, step {step}")]
    NonFinite { party: u32, round: u64, step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("label {0} outside the model's classes")]
    LabelOutOfRange(f64),
    #[error("sample counts must be positive")]
    ZeroCount,
    #[error("feature count {got} does not match model input {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
}

/// Named parameter blocks stored contiguously in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    layout: Vec<(String, usize)>,
    values: Vec<f64>,
}

impl ModelState {
    pub fn zeros(layout: Vec<(String, usize)>) -> Self {
        let n = layout.iter().map(|(_, len)| len).sum();
        Self { layout, values: alloc::vec![0.0; n] }
    }

    /// Inverse of [`ModelState::flatten`].
    pub fn unflatten(layout: Vec<(String, usize)>, values: Vec<f64>) -> Result<Self, HorizontalError> {
        let n: usize = layout.iter().map(|(_, len)| len).sum();
        if n != values.len() {
            return Err(HorizontalError::LayoutMismatch);
        }
        Ok(Self { layout, values })
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[(String, usize)] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for (n, len) in &self.layout {
            if n == name {
                return Some(&self.values[offset..offset + len]);
            }
            offset += len;
        }
        None
    }

    /// `(name, values)` pairs in layout order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        let mut offset = 0;
        self.layout.iter().map(move |(n, len)| {
            let block = &self.values[offset..offset + len];
            offset += len;
            (n.as_str(), block)
        })
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, HorizontalError> {
        if !self.same_layout(other) {
            return Err(HorizontalError::LayoutMismatch);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    FedAvg,
    FedProx,
    Scaffold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub global_epochs: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub aggregator: Aggregator,
    pub mu: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            global_epochs: 60,
            local_epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            aggregator: Aggregator::FedAvg,
            mu: 0.005,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HorizontalError> {
        if self.global_epochs == 0 || self.local_epochs == 0 {
            return Err(HorizontalError::InvalidConfig("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(HorizontalError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(self.mu >= 0.0) {
            return Err(HorizontalError::InvalidConfig("mu must be nonnegative"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(HorizontalError::InvalidConfig("learning_rate must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `grad + mu * (w - w_global)`, the gradient of the proximal term
/// `mu / 2 * ||w - w_global||^2` added to `grad`.
pub fn fedprox_correction(grad: &mut [f64], w: &[f64], w_global: &[f64], mu: f64) {
    for ((g, wi), wg) in grad.iter_mut().zip(w).zip(w_global) {
        *g += mu * (wi - wg);
    }
}

/// Option-II control update:
/// `c_local' = c_local - c_global + (w_global - w_local) / (K * lr)`.
/// Returns `(c_local', c_local' - c_local)`.
pub fn scaffold_update_controls(
    c_local: &[f64],
    c_global: &[f64],
    w_global: &[f64],
    w_local: &[f64],
    steps: u64,
    lr: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k_lr = steps as f64 * lr;
    let next: Vec<f64> = (0..c_local.len())
        .map(|i| c_local[i] - c_global[i] + (w_global[i] - w_local[i]) / k_lr)
        .collect();
    let delta = next.iter().zip(c_local).map(|(n, c)| n - c).collect();
    (next, delta)
}

/// Sample-count weighted parameter mean.
pub fn aggregate_weighted(states: &[(ModelState, u64)]) -> Result<ModelState, HorizontalError> {
    let (first, _) = states.first().ok_or(HorizontalError::EmptyData)?;
    let mut total = 0u64;
    for (s, count) in states {
        if !s.same_layout(first) {
            return Err(HorizontalError::LayoutMismatch);
        }
        if *count == 0 {
            return Err(HorizontalError::ZeroCount);
        }
        total += count;
    }
    let mut values = alloc::vec![0.0; first.len()];
    for (s, count) in states {
        let w = *count as f64;
        for (acc, v) in values.iter_mut().zip(s.flatten()) {
            *acc += w * v;
        }
    }
    for v in &mut values {
        *v /= total as f64;
    }
    ModelState::unflatten(first.layout.clone(), values)
}
