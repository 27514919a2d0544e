use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::VerticalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GossSpec {
    pub top_rate: f64,
    pub other_rate: f64,
    pub seed: u64,
}

/// Selected sample indices (ascending) with their gradient multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct GossSample {
    pub indices: Vec<usize>,
    pub multipliers: Vec<f64>,
}

impl GossSample {
    /// Dense per-sample multiplier; `None` for samples left out.
    pub fn dense(&self, n: usize) -> Vec<Option<f64>> {
        let mut out = alloc::vec![None; n];
        for (&i, &m) in self.indices.iter().zip(&self.multipliers) {
            out[i] = Some(m);
        }
        out
    }
}

// Guards ceil() against products like 0.3 * 10 = 3.0000000000000004.
fn ceil_count(rate: f64, n: usize) -> usize {
    libm::ceil(rate * n as f64 - 1e-9) as usize
}

/// Keeps the `ceil(a n)` largest `|g|` with multiplier 1 and a seeded
/// uniform sample of `ceil(b n)` of the rest with multiplier `(1 - a) / b`.
/// Ties in `|g|` keep the lower index.
pub fn goss_select(gradients: &[f64], spec: &GossSpec) -> Result<GossSample, VerticalError> {
    let (a, b) = (spec.top_rate, spec.other_rate);
    let n = gradients.len();
    if !(a > 0.0 && b > 0.0) || a + b > 1.0 + 1e-12 || (a * n as f64) < 1.0 - 1e-9 {
        return Err(VerticalError::InvalidGoss { a, b });
    }
    let top = ceil_count(a, n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| libm::fabs(gradients[j]).total_cmp(&libm::fabs(gradients[i])).then(i.cmp(&j)));
    let rest = &order[top..];
    let n_other = ceil_count(b, n).min(rest.len());
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let sampled = rand::seq::index::sample(&mut rng, rest.len(), n_other);
    let weight = (1.0 - a) / b;
    let mut picked: Vec<(usize, f64)> = order[..top].iter().map(|&i| (i, 1.0)).collect();
    picked.extend(sampled.iter().map(|k| (rest[k], weight)));
    picked.sort_unstable_by_key(|p| p.0);
    Ok(GossSample { indices: picked.iter().map(|p| p.0).collect(), multipliers: picked.iter().map(|p| p.1).collect() })
}
