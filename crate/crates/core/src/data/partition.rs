use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, Table};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Random,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub beta: f64,
    pub n_parties: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_parties < 2 {
            return Err(DataError::InvalidPartitionSpec("n_parties must be at least 2"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(DataError::InvalidPartitionSpec("beta must be positive"));
        }
        Ok(())
    }
}

/// Splits sample indices across parties.
///
/// `Random` shuffles and deals contiguous, near-equal chunks. `Dirichlet`
/// draws, for every class, party proportions `p ~ Dir(beta)` and cuts the
/// shuffled class indices at `round(cumsum(p) * n_c)`. A draw that leaves a
/// party empty is discarded and redrawn.
pub fn dirichlet_partition(labels: &[f64], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>, DataError> {
    spec.validate()?;
    if labels.len() < spec.n_parties {
        return Err(DataError::InvalidPartitionSpec("fewer samples than parties"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    match spec.kind {
        PartitionKind::Random => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut rng);
            let base = idx.len() / spec.n_parties;
            let extra = idx.len() % spec.n_parties;
            let mut out = Vec::with_capacity(spec.n_parties);
            let mut start = 0;
            for p in 0..spec.n_parties {
                let len = base + usize::from(p < extra);
                let mut part = idx[start..start + len].to_vec();
                part.sort_unstable();
                out.push(part);
                start += len;
            }
            Ok(out)
        }
        PartitionKind::Dirichlet => {
            let classes = class_indices(labels);
            if classes.len() < 2 {
                return Err(DataError::SingleClass);
            }
            let gamma = Gamma::new(spec.beta, 1.0).map_err(|_| DataError::InvalidPartitionSpec("beta"))?;
            for _ in 0..MAX_ATTEMPTS {
                let mut parts: Vec<Vec<usize>> = alloc::vec![Vec::new(); spec.n_parties];
                for members in classes.values() {
                    let mut members = members.clone();
                    members.shuffle(&mut rng);
                    let props = dirichlet_draw(&gamma, spec.n_parties, &mut rng);
                    let n_c = members.len() as f64;
                    let mut cum = 0.0;
                    let mut start = 0usize;
                    for (p, part) in parts.iter_mut().enumerate() {
                        cum += props[p];
                        let end = if p + 1 == spec.n_parties {
                            members.len()
                        } else {
                            (libm::round(cum * n_c) as usize).clamp(start, members.len())
                        };
                        part.extend_from_slice(&members[start..end]);
                        start = end;
                    }
                }
                if parts.iter().all(|p| !p.is_empty()) {
                    for p in &mut parts {
                        p.sort_unstable();
                    }
                    return Ok(parts);
                }
            }
            Err(DataError::PartitionFailed(MAX_ATTEMPTS))
        }
    }
}

fn class_indices(labels: &[f64]) -> BTreeMap<u64, Vec<usize>> {
    let mut classes: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        // Order-preserving key for f64.
        let bits = y.to_bits();
        let key = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
        classes.entry(key).or_default().push(i);
    }
    classes
}

fn dirichlet_draw(gamma: &Gamma<f64>, k: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|d| d / total).collect();
        }
    }
}

/// Gives each party its assigned feature columns; only `label_party` keeps
/// the labels. A label party absent from `assignment` receives no features.
pub fn vertical_split(
    table: &Table,
    assignment: &BTreeMap<String, Vec<String>>,
    label_party: &str,
) -> Result<BTreeMap<String, Table>, DataError> {
    let mut owned = BTreeSet::new();
    for names in assignment.values() {
        for name in names {
            if table.column(name).is_none() {
                return Err(DataError::UnknownFeature(name.clone()));
            }
            if !owned.insert(name.as_str()) {
                return Err(DataError::OverlappingFeature(name.clone()));
            }
        }
    }
    if let Some(missing) = table.feature_names().iter().find(|n| !owned.contains(n.as_str())) {
        return Err(DataError::MissingFeature(missing.clone()));
    }
    let mut out = BTreeMap::new();
    for (party, names) in assignment {
        out.insert(party.clone(), table.select_features(names, party == label_party)?);
    }
    if !out.contains_key(label_party) {
        out.insert(label_party.into(), table.select_features(&[], true)?);
    }
    Ok(out)
}
