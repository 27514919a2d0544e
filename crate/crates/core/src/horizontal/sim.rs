use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    aggregate_weighted, local_train, scaffold_update_controls, Aggregator, Architecture, HorizontalError, LocalUpdate,
    ModelState, Samples, ScaffoldCorrection, TrainConfig,
};
use crate::numeric::{FixedPointParams, RingVector};
use crate::secagg::{aggregate_masked, mask_update, MaskPlan, PartyId};

/// Secure-aggregation payload of one party:
/// `[count * w_1, ..., count * w_n, count, delta_c_1, ..., delta_c_n]`,
/// the control block present only under Scaffold.
pub fn encode_secure_update(
    update: &LocalUpdate,
    delta_c: Option<&[f64]>,
    fp: FixedPointParams,
) -> Result<RingVector, HorizontalError> {
    let count = update.count as f64;
    let mut values: Vec<f64> = update.state.flatten().iter().map(|w| count * w).collect();
    values.push(count);
    if let Some(d) = delta_c {
        values.extend_from_slice(d);
    }
    Ok(RingVector::encode(&values, fp)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecureSum {
    pub global: ModelState,
    pub total_count: f64,
    pub delta_c_sum: Option<Vec<f64>>,
}

/// Divides the aggregated weighted sum by the aggregated count.
pub fn decode_secure_sum(
    sum: &RingVector,
    layout: Vec<(String, usize)>,
    with_controls: bool,
) -> Result<SecureSum, HorizontalError> {
    let n: usize = layout.iter().map(|(_, len)| len).sum();
    let expected = if with_controls { 2 * n + 1 } else { n + 1 };
    if sum.len() != expected {
        return Err(HorizontalError::LayoutMismatch);
    }
    let decoded = sum.decode();
    let total_count = decoded[n];
    if !(total_count > 0.0) {
        return Err(HorizontalError::ZeroCount);
    }
    let weights = decoded[..n].iter().map(|v| v / total_count).collect();
    Ok(SecureSum {
        global: ModelState::unflatten(layout, weights)?,
        total_count,
        delta_c_sum: with_controls.then(|| decoded[n + 1..].to_vec()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRound {
    pub round: u64,
    pub global: ModelState,
    /// Largest per-parameter gap between the secure and plaintext aggregate.
    pub secure_gap: Option<f64>,
    /// Largest gap between `c_global` and the mean of the local controls.
    pub control_gap: Option<f64>,
}

/// In-process federation over `parties`, one entry per global epoch.
///
/// With `plans` the round aggregate goes through pairwise masking exactly as
/// an assist trainer would compute it; without, `aggregate_weighted` is used.
/// Scaffold control deltas are snapped to the fixed-point grid before the
/// local controls absorb them, so both paths add identical values.
pub fn simulate_federation(
    arch: &Architecture,
    init: ModelState,
    parties: &[Samples],
    cfg: &TrainConfig,
    plans: Option<&[MaskPlan]>,
    fp: FixedPointParams,
) -> Result<Vec<SimRound>, HorizontalError> {
    cfg.validate()?;
    if let Some(p) = plans {
        if p.len() != parties.len() {
            return Err(HorizontalError::InvalidConfig("one mask plan per party"));
        }
    }
    let scaffold = cfg.aggregator == Aggregator::Scaffold;
    let dim = init.len();
    let mut global = init;
    let mut c_global = vec![0.0; dim];
    let mut c_local = vec![vec![0.0; dim]; parties.len()];
    let mut history = Vec::with_capacity(cfg.global_epochs as usize);
    let n_parties = parties.len() as f64;

    for round in 0..u64::from(cfg.global_epochs) {
        let mut updates: Vec<LocalUpdate> = Vec::with_capacity(parties.len());
        let mut deltas: Vec<Vec<f64>> = Vec::new();
        for (p, data) in parties.iter().enumerate() {
            let correction = scaffold.then(|| ScaffoldCorrection { c_local: c_local[p].clone(), c_global: c_global.clone() });
            let update = local_train(&global, arch, data, cfg, p as u32, round, correction.as_ref())?;
            if scaffold {
                let (_, delta) = scaffold_update_controls(
                    &c_local[p],
                    &c_global,
                    global.flatten(),
                    update.state.flatten(),
                    update.steps,
                    cfg.learning_rate,
                );
                let delta = delta.into_iter().map(|d| fp.quantize(d)).collect::<Result<Vec<_>, _>>()?;
                for (c, d) in c_local[p].iter_mut().zip(&delta) {
                    *c += d;
                }
                deltas.push(delta);
            }
            updates.push(update);
        }

        let plain = aggregate_weighted(&updates.iter().map(|u| (u.state.clone(), u.count)).collect::<Vec<_>>())?;
        let (next, delta_sum, secure_gap) = match plans {
            Some(plans) => {
                let mut masked = Vec::with_capacity(plans.len());
                for (i, (plan, update)) in plans.iter().zip(&updates).enumerate() {
                    let payload = encode_secure_update(update, deltas.get(i).map(Vec::as_slice), fp)?;
                    masked.push(mask_update(&payload, plan, round)?);
                }
                let ids: Vec<PartyId> = plans.iter().map(|p| p.self_id().clone()).collect();
                let sum = aggregate_masked(&masked, &ids, round)?;
                let decoded = decode_secure_sum(&sum, global.layout().to_vec(), scaffold)?;
                let gap = decoded.global.max_abs_diff(&plain)?;
                (decoded.global, decoded.delta_c_sum, Some(gap))
            }
            None => {
                let sum = scaffold.then(|| {
                    let mut s = vec![0.0; dim];
                    for d in &deltas {
                        for (a, b) in s.iter_mut().zip(d) {
                            *a += b;
                        }
                    }
                    s
                });
                (plain, sum, None)
            }
        };

        let mut control_gap = None;
        if let Some(sum) = delta_sum {
            for (c, s) in c_global.iter_mut().zip(&sum) {
                *c += s / n_parties;
            }
            let gap = (0..dim)
                .map(|i| {
                    let mean = c_local.iter().map(|c| c[i]).sum::<f64>() / n_parties;
                    libm::fabs(mean - c_global[i])
                })
                .fold(0.0, f64::max);
            control_gap = Some(gap);
        }
        global = next;
        history.push(SimRound { round, global: global.clone(), secure_gap, control_gap });
    }
    Ok(history)
}
