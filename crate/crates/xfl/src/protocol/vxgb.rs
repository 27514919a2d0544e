//! Vertical gradient boosting with encrypted, packed histograms.
//!
//! The label trainer encrypts the packed `(g, h)` of every sample once per
//! tree. For each node it asks the trainers for encrypted per-bin sums,
//! decrypts them, and picks the best split across all parties. A split on a
//! trainer's feature is resolved by that trainer, who keeps the rule in a
//! private [`SplitTable`] and returns only an opaque `split_ref` and the left
//! sample set. Everyone then learns `(owner, split_ref, child ids, left set)`.

use std::collections::{BTreeMap, VecDeque};

use rand::RngCore;
use xfl_core::crypto::paillier::default_djn_exp_bits;
use xfl_core::crypto::wire::{Reader, Writer};
use xfl_core::crypto::{paillier_keygen, PackParams, PaillierPublicKey};
use xfl_core::data::{BinMap, Table};
use xfl_core::horizontal::mix_seed;
use xfl_core::numeric::FixedPointParams;
use xfl_core::secagg::PartyId;
use xfl_core::sigmoid;
use xfl_core::vertical::{
    build_encrypted_histogram, compute_grad_pairs, decrypt_histogram, encrypt_grad_pairs, find_best_split,
    goss_select, leaf_weight, plain_histogram, quantize_pairs, BinStat, BoostedModel, EncryptedHistogram, GossSpec,
    GradPair, SplitRule, SplitTable, TreeModel, TreeNode, XgbParams,
};

use super::{read_indices, read_opt_cts, write_indices, write_opt_cts, ProtocolError};
use crate::transport::Channel;

pub const PUBLIC_KEY: &str = "vxgb/public_key";
pub const ENC_GRADS: &str = "vxgb/enc_grads";
pub const HIST: &str = "vxgb/hist";
pub const SPLIT: &str = "vxgb/split";
pub const PARTITION: &str = "vxgb/partition";
pub const PREDICT: &str = "vxgb/predict";

#[derive(Debug, Clone)]
pub struct VxgbSetup {
    pub label: PartyId,
    /// Trainers in ordinal order.
    pub trainers: Vec<PartyId>,
    pub params: XgbParams,
    pub fp: FixedPointParams,
    pub pack: PackParams,
}

impl VxgbSetup {
    fn trainer_names(&self) -> Vec<String> {
        self.trainers.iter().map(|p| p.name.clone()).collect()
    }

    fn check(&self) -> Result<(), ProtocolError> {
        self.params.validate()?;
        let mut ords: Vec<u32> = self.trainers.iter().map(|p| p.ordinal).collect();
        ords.push(self.label.ordinal);
        ords.sort_unstable();
        ords.dedup();
        if ords.len() != self.trainers.len() + 1 {
            return Err(ProtocolError::Violation("party ordinals must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VxgbLabelOutput {
    pub model: BoostedModel,
    /// Rules for splits on the label trainer's own features.
    pub splits: SplitTable,
    /// Ensemble margin of every training row, from the training partitions.
    pub train_margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VxgbTrainerOutput {
    pub splits: SplitTable,
    /// Ciphertext additions spent building histograms.
    pub histogram_additions: u64,
}

struct Decision {
    node: u32,
    split: Option<(u32, u64, u32, u32, Vec<usize>)>,
}

impl Decision {
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.node);
        match &self.split {
            Some((owner, split_ref, l, r, left)) => {
                w.u8(1).u32(*owner).u64(*split_ref).u32(*l).u32(*r);
                write_indices(&mut w, left);
            }
            None => {
                w.u8(0);
            }
        }
        w.finish()
    }

    fn decode(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b);
        let node = r.u32()?;
        let split = match r.u8()? {
            0 => None,
            _ => Some((r.u32()?, r.u64()?, r.u32()?, r.u32()?, read_indices(&mut r)?)),
        };
        r.finish()?;
        Ok(Self { node, split })
    }
}

fn total_of(pairs: &[Option<GradPair>], idx: &[usize]) -> BinStat {
    let mut t = BinStat::default();
    for &i in idx {
        if let Some(p) = pairs[i] {
            t.g += p.g;
            t.h += p.h;
            t.count += 1;
        }
    }
    t
}

/// Samples whose bin is at most `bin` go left.
fn left_of(bins: &[u32], idx: &[usize], bin: usize) -> Vec<usize> {
    idx.iter().copied().filter(|&i| bins[i] as usize <= bin).collect()
}

fn right_of(idx: &[usize], left: &[usize]) -> Vec<usize> {
    let mut l = left.iter().peekable();
    idx.iter()
        .copied()
        .filter(|i| {
            while l.peek().is_some_and(|&&x| x < *i) {
                l.next();
            }
            l.peek() != Some(&i)
        })
        .collect()
}

/// Gradient statistics for one tree after optional GOSS reweighting,
/// snapped to the fixed-point grid.
pub fn tree_grad_pairs(
    margins: &[f64],
    labels: &[f64],
    params: &XgbParams,
    tree: u32,
    fp: &FixedPointParams,
) -> Result<Vec<Option<GradPair>>, ProtocolError> {
    let preds: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
    let pairs = compute_grad_pairs(&preds, labels);
    let selected: Vec<Option<GradPair>> = match params.goss {
        Some(spec) => {
            let g: Vec<f64> = pairs.iter().map(|p| p.g).collect();
            let spec = GossSpec { seed: mix_seed(&[spec.seed, u64::from(tree)]), ..spec };
            goss_select(&g, &spec)?
                .dense(pairs.len())
                .into_iter()
                .zip(&pairs)
                .map(|(m, p)| m.map(|m| GradPair { g: p.g * m, h: p.h * m }))
                .collect()
        }
        None => pairs.into_iter().map(Some).collect(),
    };
    Ok(quantize_pairs(&selected, fp)?)
}

/// Label-trainer side of training. `table` must carry labels in `{0, 1}`.
pub fn vxgb_label_trainer<R, T>(
    ch: &Channel,
    setup: &VxgbSetup,
    table: &Table,
    rng: &mut R,
    mut on_tree: T,
) -> Result<VxgbLabelOutput, ProtocolError>
where
    R: RngCore + ?Sized,
    T: FnMut(u32, &[f64]) -> Result<(), ProtocolError>,
{
    setup.check()?;
    let p = setup.params;
    let labels = table.require_labels()?.to_vec();
    let n = table.n_rows();
    let binmap = BinMap::fit(table, p.max_bins)?;
    let bins = binmap.transform(table)?;
    let (pk, sk) = paillier_keygen(p.key_bits, default_djn_exp_bits(p.key_bits), rng)?;
    setup.pack.check_capacity(pk.bits())?;
    let trainers = setup.trainer_names();
    ch.broadcast(&trainers, PUBLIC_KEY, &pk.to_bytes())?;

    let mut margins = vec![0.0; n];
    let mut own_splits = SplitTable::default();
    let mut trees = Vec::with_capacity(p.num_trees as usize);
    for t in 0..p.num_trees {
        let pairs = tree_grad_pairs(&margins, &labels, &p, t, &setup.fp)?;
        let enc = encrypt_grad_pairs(&sk, &pairs, &setup.pack, &setup.fp, rng)?;
        let mut w = Writer::new();
        w.u32(t);
        write_opt_cts(&mut w, &enc);
        ch.broadcast(&trainers, ENC_GRADS, &w.finish())?;

        let mut nodes = Vec::new();
        let mut leaves: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut queue = VecDeque::from([(0u32, 0u32, (0..n).collect::<Vec<usize>>())]);
        let mut next_id = 1u32;
        while let Some((id, depth, idx)) = queue.pop_front() {
            let total = total_of(&pairs, &idx);
            let weight = leaf_weight(total.g, total.h, p.lambda) * p.learning_rate;
            if depth >= p.depth {
                nodes.push(TreeNode::leaf(id, depth, weight));
                leaves.push((weight, idx));
                continue;
            }
            let mut w = Writer::new();
            w.u32(id);
            ch.broadcast(&trainers, HIST, &w.finish())?;
            let own: Vec<Vec<BinStat>> = bins
                .iter()
                .enumerate()
                .map(|(f, b)| plain_histogram(&pairs, b, binmap.n_bins(f), &idx))
                .collect();
            let mut candidates = vec![(setup.label.ordinal, own)];
            let replies = ch.gather(&trainers, HIST)?;
            for party in &setup.trainers {
                let hists = decode_histograms(&replies[&party.name])?;
                let stats = hists
                    .iter()
                    .map(|h| decrypt_histogram(&sk, h, &setup.pack, &setup.fp))
                    .collect::<Result<Vec<_>, _>>()?;
                candidates.push((party.ordinal, stats));
            }

            let Some(best) = find_best_split(&candidates, total, p.lambda, p.gamma) else {
                nodes.push(TreeNode::leaf(id, depth, weight));
                leaves.push((weight, idx));
                ch.broadcast(&trainers, PARTITION, &Decision { node: id, split: None }.encode())?;
                continue;
            };
            let (owner, split_ref, left) = if best.party == setup.label.ordinal {
                let split_ref = own_splits.rules.len() as u64;
                let threshold = binmap
                    .threshold(best.feature, best.bin)
                    .ok_or_else(|| ProtocolError::Violation("split on the last bin".into()))?;
                own_splits
                    .rules
                    .insert(split_ref, SplitRule { feature: table.feature_names()[best.feature].clone(), threshold });
                (setup.label.clone(), split_ref, left_of(&bins[best.feature], &idx, best.bin))
            } else {
                let owner = setup
                    .trainers
                    .iter()
                    .find(|q| q.ordinal == best.party)
                    .cloned()
                    .ok_or_else(|| ProtocolError::Violation(format!("no party with ordinal {}", best.party)))?;
                let mut w = Writer::new();
                w.u32(id).u32(best.feature as u32).u32(best.bin as u32);
                ch.send(&owner.name, SPLIT, w.finish())?;
                let reply = ch.recv(PARTITION, &owner.name)?;
                let mut r = Reader::new(&reply);
                let split_ref = r.u64()?;
                let left = read_indices(&mut r)?;
                r.finish()?;
                (owner, split_ref, left)
            };
            let right = right_of(&idx, &left);
            if left.len() + right.len() != idx.len() || left.is_empty() || right.is_empty() {
                return Err(ProtocolError::Violation(format!("invalid partition of node {id} from {}", owner.name)));
            }
            let (l_id, r_id) = (next_id, next_id + 1);
            next_id += 2;
            let decision = Decision { node: id, split: Some((owner.ordinal, split_ref, l_id, r_id, left.clone())) };
            ch.broadcast(&trainers, PARTITION, &decision.encode())?;
            nodes.push(TreeNode {
                id,
                depth,
                owner: Some(owner),
                split_ref: Some(split_ref),
                left: Some(l_id),
                right: Some(r_id),
                leaf_weight: None,
            });
            queue.push_back((l_id, depth + 1, left));
            queue.push_back((r_id, depth + 1, right));
        }
        for (w, idx) in leaves {
            for i in idx {
                margins[i] += w;
            }
        }
        trees.push(TreeModel { nodes, depth: p.depth });
        on_tree(t, &margins)?;
    }
    Ok(VxgbLabelOutput { model: BoostedModel { trees, params: p }, splits: own_splits, train_margins: margins })
}

fn encode_histograms(hists: &[EncryptedHistogram]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(hists.len() as u32);
    for h in hists {
        write_opt_cts(&mut w, &h.bins);
        w.u64_slice(&h.counts);
    }
    w.finish()
}

fn decode_histograms(b: &[u8]) -> Result<Vec<EncryptedHistogram>, ProtocolError> {
    let mut r = Reader::new(b);
    let k = r.u32()? as usize;
    let mut out = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let bins = read_opt_cts(&mut r)?;
        let counts = r.u64_vec()?;
        if bins.len() != counts.len() {
            return Err(ProtocolError::Violation("histogram bins and counts differ in length".into()));
        }
        out.push(EncryptedHistogram { bins, counts });
    }
    r.finish()?;
    Ok(out)
}

/// Trainer side of training. The trainer never sees labels or plaintext
/// gradients; it learns node partitions and the rules of its own splits.
pub fn vxgb_trainer(ch: &Channel, setup: &VxgbSetup, table: &Table) -> Result<VxgbTrainerOutput, ProtocolError> {
    setup.check()?;
    let p = setup.params;
    let label = &setup.label.name;
    let n = table.n_rows();
    let binmap = BinMap::fit(table, p.max_bins)?;
    let bins = binmap.transform(table)?;
    let pk = PaillierPublicKey::from_bytes(&ch.recv(PUBLIC_KEY, label)?)?;
    let mut splits = SplitTable::default();
    let mut additions = 0u64;

    for t in 0..p.num_trees {
        let bytes = ch.recv(ENC_GRADS, label)?;
        let mut r = Reader::new(&bytes);
        let tree = r.u32()?;
        let enc = read_opt_cts(&mut r)?;
        r.finish()?;
        if tree != t || enc.len() != n {
            return Err(ProtocolError::Violation(format!(
                "gradients for tree {tree} with {} rows, expected tree {t} with {n}",
                enc.len()
            )));
        }
        let mut node_rows: BTreeMap<u32, Vec<usize>> = BTreeMap::from([(0, (0..n).collect())]);
        let mut queue = VecDeque::from([(0u32, 0u32)]);
        while let Some((id, depth)) = queue.pop_front() {
            if depth >= p.depth {
                continue;
            }
            let req = ch.recv(HIST, label)?;
            let mut r = Reader::new(&req);
            let asked = r.u32()?;
            r.finish()?;
            if asked != id {
                return Err(ProtocolError::Violation(format!("histogram request for node {asked}, expected {id}")));
            }
            let idx = node_rows.remove(&id).unwrap_or_default();
            let hists = bins
                .iter()
                .enumerate()
                .map(|(f, b)| build_encrypted_histogram(&pk, &enc, b, binmap.n_bins(f), &idx, &mut additions))
                .collect::<Result<Vec<_>, _>>()?;
            ch.send(label, HIST, encode_histograms(&hists))?;

            let (key, msg) = ch.recv_any(&[SPLIT, PARTITION], label)?;
            let msg = if key == SPLIT {
                let mut r = Reader::new(&msg);
                let (node, feature, bin) = (r.u32()?, r.u32()? as usize, r.u32()? as usize);
                r.finish()?;
                if node != id || feature >= bins.len() {
                    return Err(ProtocolError::Violation(format!("split request for node {node} feature {feature}")));
                }
                let threshold = binmap
                    .threshold(feature, bin)
                    .ok_or_else(|| ProtocolError::Violation(format!("split on bin {bin} of feature {feature}")))?;
                let split_ref = splits.rules.len() as u64;
                splits.rules.insert(split_ref, SplitRule { feature: table.feature_names()[feature].clone(), threshold });
                let left = left_of(&bins[feature], &idx, bin);
                let mut w = Writer::new();
                w.u64(split_ref);
                write_indices(&mut w, &left);
                ch.send(label, PARTITION, w.finish())?;
                ch.recv(PARTITION, label)?
            } else {
                msg
            };
            let decision = Decision::decode(&msg)?;
            if decision.node != id {
                return Err(ProtocolError::Violation(format!("decision for node {}, expected {id}", decision.node)));
            }
            if let Some((_, _, l, r, left)) = decision.split {
                let right = right_of(&idx, &left);
                node_rows.insert(l, left);
                node_rows.insert(r, right);
                queue.push_back((l, depth + 1));
                queue.push_back((r, depth + 1));
            }
        }
    }
    Ok(VxgbTrainerOutput { splits, histogram_additions: additions })
}

/// Label-trainer side of inference: probabilities for the rows of `table`,
/// which must be row-aligned with every trainer's prediction table.
pub fn vxgb_predict_label(
    ch: &Channel,
    setup: &VxgbSetup,
    model: &BoostedModel,
    own_splits: &SplitTable,
    table: &Table,
) -> Result<Vec<f64>, ProtocolError> {
    let n = table.n_rows();
    let mut answers: BTreeMap<(u32, u64), Vec<bool>> = BTreeMap::new();
    for party in &setup.trainers {
        let refs: Vec<u64> = model
            .trees
            .iter()
            .flat_map(|t| t.split_refs())
            .filter(|(o, _)| o.ordinal == party.ordinal)
            .map(|(_, r)| r)
            .collect();
        let mut w = Writer::new();
        w.u64(n as u64).u64_slice(&refs);
        ch.send(&party.name, PREDICT, w.finish())?;
        let reply = ch.recv(PREDICT, &party.name)?;
        let mut r = Reader::new(&reply);
        for &sr in &refs {
            let bits = r.bytes()?;
            if bits.len() != n.div_ceil(8) {
                return Err(ProtocolError::Violation(format!("routing bitmap from {} has wrong size", party.name)));
            }
            answers.insert((party.ordinal, sr), (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        r.finish()?;
    }
    let mut own_columns = BTreeMap::new();
    for (sr, rule) in &own_splits.rules {
        let col = table
            .column(&rule.feature)
            .ok_or_else(|| ProtocolError::Violation(format!("prediction table lacks feature {:?}", rule.feature)))?;
        own_columns.insert(*sr, col);
    }
    (0..n)
        .map(|i| {
            let mut margin = 0.0;
            for tree in &model.trees {
                margin += tree.leaf_value(|owner, sr| {
                    if owner.ordinal == setup.label.ordinal {
                        let col = own_columns.get(&sr).ok_or(xfl_core::vertical::VerticalError::UnknownSplitRef(sr))?;
                        own_splits.goes_left(sr, col[i])
                    } else {
                        answers
                            .get(&(owner.ordinal, sr))
                            .map(|a| a[i])
                            .ok_or(xfl_core::vertical::VerticalError::UnknownSplitRef(sr))
                    }
                })?;
            }
            Ok(sigmoid(margin))
        })
        .collect()
}

/// Trainer side of inference: answers left/right for each requested split.
pub fn vxgb_predict_trainer(
    ch: &Channel,
    setup: &VxgbSetup,
    splits: &SplitTable,
    table: &Table,
) -> Result<(), ProtocolError> {
    let req = ch.recv(PREDICT, &setup.label.name)?;
    let mut r = Reader::new(&req);
    let n = r.u64()? as usize;
    let refs = r.u64_vec()?;
    r.finish()?;
    if n != table.n_rows() {
        return Err(ProtocolError::Violation(format!("prediction over {n} rows, local table has {}", table.n_rows())));
    }
    let mut w = Writer::new();
    for sr in refs {
        let rule = splits.rule(sr)?;
        let col = table
            .column(&rule.feature)
            .ok_or_else(|| ProtocolError::Violation(format!("prediction table lacks feature {:?}", rule.feature)))?;
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, &x) in col.iter().enumerate() {
            if x <= rule.threshold {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.bytes(&bits);
    }
    ch.send(&setup.label.name, PREDICT, w.finish())?;
    Ok(())
}
