use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use super::{GossSpec, VerticalError};
use crate::crypto::{
    ct_add, pack_pair, paillier_decrypt, paillier_encrypt_sk, unpack_pair, PackParams, PaillierCiphertext,
    PaillierPrivateKey, PaillierPublicKey,
};
use crate::numeric::{sigmoid, FixedPointParams};
use crate::secagg::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XgbParams {
    pub num_trees: u32,
    pub depth: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub goss: Option<GossSpec>,
    pub key_bits: u32,
    pub max_bins: usize,
}

impl Default for XgbParams {
    fn default() -> Self {
        Self { num_trees: 10, depth: 2, learning_rate: 0.3, lambda: 1.0, gamma: 0.0, goss: None, key_bits: 2048, max_bins: 32 }
    }
}

impl XgbParams {
    pub fn validate(&self) -> Result<(), VerticalError> {
        if self.num_trees == 0 || self.depth == 0 {
            return Err(VerticalError::InvalidParams("num_trees and depth must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(VerticalError::InvalidParams("lambda, gamma must be >= 0 and learning_rate > 0"));
        }
        if self.max_bins < 2 {
            return Err(VerticalError::InvalidParams("max_bins must be at least 2"));
        }
        if let Some(g) = &self.goss {
            if !(g.top_rate > 0.0 && g.other_rate > 0.0) || g.top_rate + g.other_rate > 1.0 + 1e-12 {
                return Err(VerticalError::InvalidGoss { a: g.top_rate, b: g.other_rate });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradPair {
    pub g: f64,
    pub h: f64,
}

/// Log-loss statistics `g = p - y`, `h = p (1 - p)`.
pub fn compute_grad_pairs(preds: &[f64], labels: &[f64]) -> Vec<GradPair> {
    preds.iter().zip(labels).map(|(&p, &y)| GradPair { g: p - y, h: p * (1.0 - p) }).collect()
}

/// Snaps both statistics onto the fixed-point grid.
pub fn quantize_pairs(pairs: &[Option<GradPair>], fp: &FixedPointParams) -> Result<Vec<Option<GradPair>>, VerticalError> {
    pairs
        .iter()
        .map(|p| match p {
            Some(p) => Ok(Some(GradPair { g: fp.quantize(p.g)?, h: fp.quantize(p.h)? })),
            None => Ok(None),
        })
        .collect()
}

/// `0.5 * (G_L^2 / (H_L + l) + G_R^2 / (H_R + l) - G^2 / (H + l)) - gamma`
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64, gamma: f64) -> f64 {
    let gr = g - gl;
    let hr = h - hl;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// `-G / (H + lambda)`
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub g: f64,
    pub h: f64,
    pub count: u64,
}

impl BinStat {
    fn add(&mut self, other: &BinStat) {
        self.g += other.g;
        self.h += other.h;
        self.count += other.count;
    }
}

/// Per-bin sums over the node's selected samples (`None` entries skipped).
pub fn plain_histogram(pairs: &[Option<GradPair>], bins: &[u32], n_bins: usize, node: &[usize]) -> Vec<BinStat> {
    let mut hist = vec![BinStat::default(); n_bins];
    for &i in node {
        if let Some(p) = pairs[i] {
            let b = &mut hist[bins[i] as usize];
            b.g += p.g;
            b.h += p.h;
            b.count += 1;
        }
    }
    hist
}

/// Packs each selected pair and encrypts it on the secret-key path.
pub fn encrypt_grad_pairs<R: RngCore + ?Sized>(
    sk: &PaillierPrivateKey,
    pairs: &[Option<GradPair>],
    pp: &PackParams,
    fp: &FixedPointParams,
    rng: &mut R,
) -> Result<Vec<Option<PaillierCiphertext>>, VerticalError> {
    let pk = sk.public_key();
    pp.check_capacity(pk.bits())?;
    pairs
        .iter()
        .map(|p| match p {
            Some(p) => {
                let m = pack_pair(p.g, p.h, pp, fp)?;
                Ok(Some(paillier_encrypt_sk(sk, pk, &m, rng)?))
            }
            None => Ok(None),
        })
        .collect()
}

/// One feature's encrypted histogram; bins without members carry no
/// ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedHistogram {
    pub bins: Vec<Option<PaillierCiphertext>>,
    pub counts: Vec<u64>,
}

/// Homomorphically sums the ciphertexts of the node's samples per bin.
/// `additions` is incremented once per ciphertext addition performed.
pub fn build_encrypted_histogram(
    pk: &PaillierPublicKey,
    enc: &[Option<PaillierCiphertext>],
    bins: &[u32],
    n_bins: usize,
    node: &[usize],
    additions: &mut u64,
) -> Result<EncryptedHistogram, VerticalError> {
    if node.is_empty() {
        return Err(VerticalError::EmptyNode);
    }
    if enc.len() != bins.len() {
        return Err(VerticalError::LengthMismatch(enc.len(), bins.len()));
    }
    let mut out = EncryptedHistogram { bins: vec![None; n_bins], counts: vec![0; n_bins] };
    for &i in node {
        let Some(ct) = &enc[i] else { continue };
        let b = bins[i] as usize;
        out.bins[b] = Some(match out.bins[b].take() {
            None => ct.clone(),
            Some(acc) => {
                *additions += 1;
                ct_add(pk, &acc, ct)?
            }
        });
        out.counts[b] += 1;
    }
    Ok(out)
}

pub fn decrypt_histogram(
    sk: &PaillierPrivateKey,
    hist: &EncryptedHistogram,
    pp: &PackParams,
    fp: &FixedPointParams,
) -> Result<Vec<BinStat>, VerticalError> {
    hist.bins
        .iter()
        .zip(&hist.counts)
        .map(|(ct, &count)| match ct {
            Some(ct) => {
                let m = paillier_decrypt(sk, ct)?;
                let (g, h) = unpack_pair(&m, count, pp, fp)?;
                Ok(BinStat { g, h, count })
            }
            None => Ok(BinStat::default()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub party: u32,
    pub feature: usize,
    /// Samples in bins `0..=bin` go left.
    pub bin: usize,
    pub gain: f64,
    pub left: BinStat,
    pub right: BinStat,
}

/// Best split over `(party ordinal, per-feature histograms)`.
///
/// Candidates are scanned in party, feature, bin order and only a strictly
/// larger gain replaces the incumbent, so ties resolve to the lowest party
/// ordinal, then feature, then bin. A split needs positive gain and samples
/// on both sides.
pub fn find_best_split(
    histograms: &[(u32, Vec<Vec<BinStat>>)],
    total: BinStat,
    lambda: f64,
    gamma: f64,
) -> Option<SplitCandidate> {
    let mut order: Vec<usize> = (0..histograms.len()).collect();
    order.sort_by_key(|&i| histograms[i].0);
    let mut best: Option<SplitCandidate> = None;
    for i in order {
        let (party, features) = &histograms[i];
        for (feature, hist) in features.iter().enumerate() {
            let mut left = BinStat::default();
            for (bin, stat) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
                left.add(stat);
                let right = BinStat { g: total.g - left.g, h: total.h - left.h, count: total.count - left.count };
                if left.count == 0 || right.count == 0 {
                    continue;
                }
                let gain = split_gain(left.g, left.h, total.g, total.h, lambda, gamma);
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitCandidate { party: *party, feature, bin, gain, left, right });
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: u32,
    pub depth: u32,
    pub owner: Option<PartyId>,
    pub split_ref: Option<u64>,
    pub left: Option<u32>,
    pub right: Option<u32>,
    /// Already scaled by the learning rate.
    pub leaf_weight: Option<f64>,
}

impl TreeNode {
    pub fn leaf(id: u32, depth: u32, weight: f64) -> Self {
        Self { id, depth, owner: None, split_ref: None, left: None, right: None, leaf_weight: Some(weight) }
    }

    pub fn is_leaf(&self) -> bool {
        self.leaf_weight.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub depth: u32,
}

impl TreeModel {
    fn node(&self, id: u32) -> Result<&TreeNode, VerticalError> {
        self.nodes.iter().find(|n| n.id == id).ok_or(VerticalError::MalformedTree("dangling child id"))
    }

    /// Walks from the root; `goes_left(owner, split_ref)` answers each split.
    pub fn leaf_value<F>(&self, mut goes_left: F) -> Result<f64, VerticalError>
    where
        F: FnMut(&PartyId, u64) -> Result<bool, VerticalError>,
    {
        let mut node = self.nodes.first().ok_or(VerticalError::MalformedTree("empty tree"))?;
        for _ in 0..=self.nodes.len() {
            if let Some(w) = node.leaf_weight {
                return Ok(w);
            }
            let (Some(owner), Some(split_ref), Some(l), Some(r)) = (&node.owner, node.split_ref, node.left, node.right)
            else {
                return Err(VerticalError::MalformedTree("internal node without split"));
            };
            node = self.node(if goes_left(owner, split_ref)? { l } else { r })?;
        }
        Err(VerticalError::MalformedTree("cycle"))
    }

    pub fn split_refs(&self) -> impl Iterator<Item = (&PartyId, u64)> {
        self.nodes.iter().filter_map(|n| Some((n.owner.as_ref()?, n.split_ref?)))
    }
}

/// Ensemble margin `sum of leaf values`, probability `sigmoid(margin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<TreeModel>,
    pub params: XgbParams,
}

impl BoostedModel {
    pub fn probability(margin: f64) -> f64 {
        sigmoid(margin)
    }
}

/// An owner's private split rule: `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: String,
    pub threshold: f64,
}

/// Owner-side sidecar mapping opaque split refs to rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub rules: BTreeMap<u64, SplitRule>,
}

impl SplitTable {
    pub fn goes_left(&self, split_ref: u64, value: f64) -> Result<bool, VerticalError> {
        let rule = self.rules.get(&split_ref).ok_or(VerticalError::UnknownSplitRef(split_ref))?;
        Ok(value <= rule.threshold)
    }

    pub fn rule(&self, split_ref: u64) -> Result<&SplitRule, VerticalError> {
        self.rules.get(&split_ref).ok_or(VerticalError::UnknownSplitRef(split_ref))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::paillier_keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn gain_and_weight_cases() {
        assert_eq!(split_gain(1.5, 2.0, 1.5, 2.0, 1.0, 0.25), -0.25);
        assert_eq!(split_gain(2.0, 1.0, 0.0, 2.0, 1.0, 0.0), 2.0);
        assert_eq!(leaf_weight(0.0, 5.0, 1.0), -0.0);
        assert_eq!(leaf_weight(2.0, 3.0, 1.0), -0.5);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (g, h, l) = (rng.random_range(-50.0..50.0), rng.random_range(0.0..20.0), rng.random_range(0.0..3.0));
            assert_eq!(leaf_weight(g, h, l), -g / (h + l));
        }
    }

    #[test]
    fn grad_pairs_match_log_loss_derivatives() {
        assert_eq!(compute_grad_pairs(&[0.5], &[1.0])[0], GradPair { g: -0.5, h: 0.25 });
        assert_eq!(compute_grad_pairs(&[1.0], &[1.0])[0].g, 0.0);
        // d/dz and d2/dz2 of log loss at margin z with p = sigmoid(z).
        let loss = |z: f64, y: f64| {
            let p = sigmoid(z);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        for &(z, y) in &[(0.3, 1.0), (-1.2, 0.0), (2.0, 0.0)] {
            let e = 1e-4;
            let d1 = (loss(z + e, y) - loss(z - e, y)) / (2.0 * e);
            let d2 = (loss(z + e, y) - 2.0 * loss(z, y) + loss(z - e, y)) / (e * e);
            let gp = compute_grad_pairs(&[sigmoid(z)], &[y])[0];
            assert!((gp.g - d1).abs() < 1e-7);
            assert!((gp.h - d2).abs() < 1e-5);
        }
    }

    fn brute_best(pairs: &[GradPair], values: &[Vec<f64>], lambda: f64) -> Option<(usize, f64, f64)> {
        let g: f64 = pairs.iter().map(|p| p.g).sum();
        let h: f64 = pairs.iter().map(|p| p.h).sum();
        let mut best: Option<(usize, f64, f64)> = None;
        for (f, col) in values.iter().enumerate() {
            let mut thresholds = col.clone();
            thresholds.sort_by(f64::total_cmp);
            thresholds.dedup();
            for &t in &thresholds {
                let (mut gl, mut hl, mut n) = (0.0, 0.0, 0);
                for (i, &x) in col.iter().enumerate() {
                    if x <= t {
                        gl += pairs[i].g;
                        hl += pairs[i].h;
                        n += 1;
                    }
                }
                if n == 0 || n == col.len() {
                    continue;
                }
                let gain = split_gain(gl, hl, g, h, lambda, 0.0);
                if best.is_none_or(|b| gain > b.2 + 1e-12) {
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    #[test]
    fn histogram_split_matches_exhaustive_search() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 50;
            let values: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let pairs: Vec<GradPair> = (0..n)
                .map(|_| {
                    let p: f64 = rng.random_range(0.05..0.95);
                    GradPair { g: p - f64::from(u8::from(rng.random_bool(0.5))), h: p * (1.0 - p) }
                })
                .collect();
            // One bin per distinct value makes histogram splits exhaustive.
            let mut features = Vec::new();
            for col in &values {
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                let bins: Vec<u32> = col.iter().map(|x| sorted.iter().position(|s| s == x).unwrap() as u32).collect();
                let wrapped: Vec<Option<GradPair>> = pairs.iter().copied().map(Some).collect();
                let idx: Vec<usize> = (0..n).collect();
                features.push(plain_histogram(&wrapped, &bins, n, &idx));
            }
            let total = BinStat { g: pairs.iter().map(|p| p.g).sum(), h: pairs.iter().map(|p| p.h).sum(), count: n as u64 };
            let got = find_best_split(&[(0, features)], total, 1.0, 0.0).unwrap();
            let (f, t, gain) = brute_best(&pairs, &values, 1.0).unwrap();
            assert_eq!(got.feature, f);
            let mut sorted = values[f].clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted[got.bin], t);
            assert!((got.gain - gain).abs() < 1e-9);
        }
    }

    #[test]
    fn tie_break_prefers_lowest_party_feature_bin() {
        let hist = vec![
            BinStat { g: -2.0, h: 1.0, count: 1 },
            BinStat { g: 2.0, h: 1.0, count: 1 },
        ];
        let total = BinStat { g: 0.0, h: 2.0, count: 2 };
        let got = find_best_split(&[(2, vec![hist.clone()]), (1, vec![hist.clone(), hist])], total, 1.0, 0.0).unwrap();
        assert_eq!((got.party, got.feature, got.bin), (1, 0, 0));
        assert_eq!(got.gain, 2.0);
        let flat = vec![BinStat { g: 1.0, h: 1.0, count: 1 }, BinStat { g: 1.0, h: 1.0, count: 1 }];
        assert!(find_best_split(&[(0, vec![flat])], BinStat { g: 2.0, h: 2.0, count: 2 }, 1.0, 0.0).is_none());
    }

    #[test]
    fn encrypted_histogram_matches_plaintext() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (pk, sk) = paillier_keygen(512, 320, &mut rng).unwrap();
        let (pp, fp) = (PackParams::default(), FixedPointParams::default());
        let n = 40;
        let pairs: Vec<Option<GradPair>> = (0..n)
            .map(|i| (i % 7 != 3).then(|| GradPair { g: rng.random_range(-1.0..1.0), h: rng.random_range(0.0..0.25) }))
            .collect();
        let bins: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let node: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
        let enc = encrypt_grad_pairs(&sk, &pairs, &pp, &fp, &mut rng).unwrap();
        let mut adds = 0;
        let hist = build_encrypted_histogram(&pk, &enc, &bins, 5, &node, &mut adds).unwrap();
        let dec = decrypt_histogram(&sk, &hist, &pp, &fp).unwrap();
        let plain = plain_histogram(&pairs, &bins, 5, &node);
        let members: u64 = plain.iter().map(|b| b.count).sum();
        let nonempty = plain.iter().filter(|b| b.count > 0).count() as u64;
        assert_eq!(adds, members - nonempty);
        for (d, p) in dec.iter().zip(&plain) {
            assert_eq!(d.count, p.count);
            let tol = (p.count as f64).max(1.0) * fp.resolution();
            assert!((d.g - p.g).abs() <= tol && (d.h - p.h).abs() <= tol);
        }
        // Quantized statistics decrypt exactly.
        let q = quantize_pairs(&pairs, &fp).unwrap();
        let enc = encrypt_grad_pairs(&sk, &q, &pp, &fp, &mut rng).unwrap();
        let hist = build_encrypted_histogram(&pk, &enc, &bins, 5, &node, &mut adds).unwrap();
        assert_eq!(decrypt_histogram(&sk, &hist, &pp, &fp).unwrap(), plain_histogram(&q, &bins, 5, &node));
    }

    #[test]
    fn single_sample_bin_is_that_ciphertext() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (pk, sk) = paillier_keygen(512, 320, &mut rng).unwrap();
        let (pp, fp) = (PackParams::default(), FixedPointParams::default());
        let enc = encrypt_grad_pairs(&sk, &[Some(GradPair { g: 0.5, h: 0.25 })], &pp, &fp, &mut rng).unwrap();
        let mut adds = 0;
        let hist = build_encrypted_histogram(&pk, &enc, &[2], 3, &[0], &mut adds).unwrap();
        assert_eq!(hist.bins[2], enc[0]);
        assert_eq!(adds, 0);
        assert_eq!(build_encrypted_histogram(&pk, &enc, &[2], 3, &[], &mut adds).unwrap_err(), VerticalError::EmptyNode);
    }

    #[test]
    fn tree_traversal() {
        let owner = PartyId::new(1, "host");
        let tree = TreeModel {
            depth: 1,
            nodes: vec![
                TreeNode { id: 0, depth: 0, owner: Some(owner.clone()), split_ref: Some(7), left: Some(1), right: Some(2), leaf_weight: None },
                TreeNode::leaf(1, 1, -0.5),
                TreeNode::leaf(2, 1, 0.25),
            ],
        };
        let mut table = SplitTable::default();
        table.rules.insert(7, SplitRule { feature: "x".into(), threshold: 1.0 });
        let value = |x: f64| tree.leaf_value(|_, r| table.goes_left(r, x)).unwrap();
        assert_eq!(value(1.0), -0.5);
        assert_eq!(value(1.5), 0.25);
        assert_eq!(tree.split_refs().collect::<Vec<_>>(), vec![(&owner, 7)]);
        assert_eq!(table.goes_left(8, 0.0).unwrap_err(), VerticalError::UnknownSplitRef(8));
        let single = TreeModel { depth: 0, nodes: vec![TreeNode::leaf(0, 0, 0.1)] };
        assert_eq!(single.leaf_value(|_, _| unreachable!()).unwrap(), 0.1);
    }
}
