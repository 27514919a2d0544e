use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{fedprox_correction, Aggregator, Architecture, HorizontalError, ModelState, TrainConfig};
use crate::data::Table;

/// Row-major training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, HorizontalError> {
        if x.len() != y.len() {
            return Err(HorizontalError::LayoutMismatch);
        }
        Ok(Self { x, y })
    }

    pub fn from_table(table: &Table) -> Result<Self, HorizontalError> {
        let y = table.labels().ok_or(HorizontalError::EmptyData)?.to_vec();
        Ok(Self { x: table.rows(), y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { x: idx.iter().map(|&i| self.x[i].clone()).collect(), y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

/// Scaffold control variates seen by one party, flattened in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldCorrection {
    pub c_local: Vec<f64>,
    pub c_global: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub state: ModelState,
    pub count: u64,
    /// Number of SGD steps taken (`K` in the Scaffold control update).
    pub steps: u64,
    pub last_loss: f64,
}

/// SplitMix64 finalizer over the inputs; derives independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Mini-batch SGD from `global` for `local_epochs` epochs.
///
/// The sample order of each epoch is a shuffle seeded by
/// `(cfg.seed, party, round, epoch)`. Per step the batch gradient is
/// modified by the aggregator: FedProx adds `mu * (w - w_global)` and
/// Scaffold adds `c_global - c_local`.
pub fn local_train(
    global: &ModelState,
    arch: &Architecture,
    data: &Samples,
    cfg: &TrainConfig,
    party: u32,
    round: u64,
    correction: Option<&ScaffoldCorrection>,
) -> Result<LocalUpdate, HorizontalError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(HorizontalError::EmptyData);
    }
    if global.layout() != arch.layout().as_slice() {
        return Err(HorizontalError::LayoutMismatch);
    }
    if let Some(row) = data.x.iter().find(|r| r.len() != arch.n_features) {
        return Err(HorizontalError::FeatureMismatch { expected: arch.n_features, got: row.len() });
    }
    for &y in &data.y {
        arch.check_label(y)?;
    }
    let scaffold = match (cfg.aggregator, correction) {
        (Aggregator::Scaffold, Some(c)) => {
            if c.c_local.len() != global.len() || c.c_global.len() != global.len() {
                return Err(HorizontalError::LayoutMismatch);
            }
            Some(c)
        }
        (Aggregator::Scaffold, None) => return Err(HorizontalError::InvalidConfig("scaffold needs control variates")),
        _ => None,
    };

    let w_global = global.flatten();
    let mut w = w_global.to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0u64;
    let mut last_loss = 0.0;
    for epoch in 0..cfg.local_epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(&[cfg.seed, u64::from(party), round, u64::from(epoch)]));
        idx.shuffle(&mut rng);
        for batch in idx.chunks(cfg.batch_size) {
            let loss = arch.loss_grad(&w, &data.x, &data.y, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(HorizontalError::NonFinite { party, round, step: steps });
            }
            last_loss = loss;
            match cfg.aggregator {
                Aggregator::FedProx if cfg.mu != 0.0 => fedprox_correction(&mut grad, &w, w_global, cfg.mu),
                Aggregator::Scaffold => {
                    let c = scaffold.expect("checked above");
                    for ((g, cl), cg) in grad.iter_mut().zip(&c.c_local).zip(&c.c_global) {
                        *g = *g - cl + cg;
                    }
                }
                _ => {}
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= cfg.learning_rate * gi;
            }
            steps += 1;
        }
    }
    Ok(LocalUpdate {
        state: ModelState::unflatten(global.layout().to_vec(), w)?,
        count: data.len() as u64,
        steps,
        last_loss,
    })
}
