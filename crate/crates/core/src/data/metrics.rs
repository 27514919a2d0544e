use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: f64,
    pub auc: f64,
    pub accuracy: f64,
    pub loss: f64,
}

fn class_counts(scores: &[f64], labels: &[f64]) -> Result<(usize, usize), DataError> {
    if scores.len() != labels.len() {
        return Err(DataError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut pos = 0;
    for &y in labels {
        if y == 1.0 {
            pos += 1;
        } else if y != 0.0 {
            return Err(DataError::NonBinaryLabel(y));
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(DataError::SingleClass);
    }
    Ok((pos, neg))
}

fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// `max_t |TPR(t) - FPR(t)|` where a sample is predicted positive when its
/// score is `>= t`, over every distinct score `t`.
pub fn ks_statistic(scores: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let order = by_score_desc(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let d = libm::fabs(tp as f64 / pos as f64 - fp as f64 / neg as f64);
        best = best.max(d);
    }
    Ok(best)
}

/// Mann-Whitney AUC with midranks for tied scores.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] == 1.0 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Fraction of samples with `(score >= threshold) == (label == 1)`.
pub fn accuracy(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64, DataError> {
    if scores.len() != labels.len() {
        return Err(DataError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(DataError::Empty);
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &y)| (s >= threshold) == (y == 1.0)).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Fraction of exact matches between predicted and true class labels.
pub fn class_accuracy(predicted: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    if predicted.len() != labels.len() {
        return Err(DataError::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(DataError::Empty);
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-15, 1 - 1e-15]`.
pub fn log_loss(probs: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    if probs.len() != labels.len() {
        return Err(DataError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(DataError::Empty);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
        })
        .sum();
    Ok(total / probs.len() as f64)
}

pub fn binary_report(probs: &[f64], labels: &[f64]) -> Result<MetricsReport, DataError> {
    Ok(MetricsReport {
        ks: ks_statistic(probs, labels)?,
        auc: auc(probs, labels)?,
        accuracy: accuracy(probs, labels, 0.5)?,
        loss: log_loss(probs, labels)?,
    })
}
