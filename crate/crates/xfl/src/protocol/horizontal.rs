//! Horizontal training loop between label trainers and an assist trainer.
//!
//! Each round the assist trainer broadcasts the global model (and the global
//! Scaffold control), every label trainer trains locally and uploads its
//! masked `[count * w, count, delta_c]` vector, and the assist trainer sums
//! the masked vectors into the next global model. A final broadcast carries
//! the finished model.

use xfl_core::crypto::wire::{Reader, Writer};
use xfl_core::horizontal::{
    decode_secure_sum, encode_secure_update, local_train, scaffold_update_controls, Aggregator, Architecture,
    ModelState, Samples, ScaffoldCorrection, TrainConfig,
};
use xfl_core::numeric::FixedPointParams;
use xfl_core::secagg::{aggregate_masked, mask_update, MaskPlan, MaskedVector, PartyId};

use super::secagg::MASKED_UPDATE;
use super::ProtocolError;
use crate::transport::Channel;

pub const GLOBAL: &str = "hfl/global";

#[derive(Debug, Clone)]
pub struct HflSetup {
    /// Label trainers in ordinal order; ordinals are `0..n`.
    pub parties: Vec<PartyId>,
    pub assist: String,
    pub arch: Architecture,
    pub cfg: TrainConfig,
    pub fp: FixedPointParams,
}

impl HflSetup {
    fn names(&self) -> Vec<String> {
        self.parties.iter().map(|p| p.name.clone()).collect()
    }
}

struct GlobalMsg {
    round: u64,
    last: bool,
    values: Vec<f64>,
    c_global: Vec<f64>,
}

impl GlobalMsg {
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.round).u8(u8::from(self.last)).f64_slice(&self.values).f64_slice(&self.c_global);
        w.finish()
    }

    fn decode(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b);
        let m = Self { round: r.u64()?, last: r.u8()? != 0, values: r.f64_vec()?, c_global: r.f64_vec()? };
        r.finish()?;
        Ok(m)
    }
}

/// Assist-trainer side. `on_round(round, global)` sees each new global model.
pub fn hfl_assist<F>(ch: &Channel, setup: &HflSetup, mut on_round: F) -> Result<ModelState, ProtocolError>
where
    F: FnMut(u64, &ModelState) -> Result<(), ProtocolError>,
{
    setup.cfg.validate()?;
    let names = setup.names();
    let scaffold = setup.cfg.aggregator == Aggregator::Scaffold;
    let layout = setup.arch.layout();
    let mut global = setup.arch.init(setup.cfg.seed);
    let dim = global.len();
    let mut c_global = vec![0.0; dim];
    let n_parties = setup.parties.len() as f64;

    for round in 0..u64::from(setup.cfg.global_epochs) {
        let msg = GlobalMsg { round, last: false, values: global.flatten().to_vec(), c_global: c_global.clone() };
        ch.broadcast(&names, GLOBAL, &msg.encode())?;
        let uploads = ch.gather(&names, MASKED_UPDATE)?;
        let mut masked = Vec::with_capacity(uploads.len());
        for bytes in uploads.values() {
            masked.push(MaskedVector::from_bytes(bytes)?);
        }
        let sum = aggregate_masked(&masked, &setup.parties, round)?;
        let decoded = decode_secure_sum(&sum, layout.clone(), scaffold)?;
        if let Some(delta) = decoded.delta_c_sum {
            for (c, s) in c_global.iter_mut().zip(&delta) {
                *c += s / n_parties;
            }
        }
        global = decoded.global;
        on_round(round, &global)?;
    }
    let done = GlobalMsg {
        round: u64::from(setup.cfg.global_epochs),
        last: true,
        values: global.flatten().to_vec(),
        c_global,
    };
    ch.broadcast(&names, GLOBAL, &done.encode())?;
    Ok(global)
}

/// Label-trainer side. `on_round(round, global)` sees every global model
/// received after round `round` completes.
pub fn hfl_party<F>(
    ch: &Channel,
    setup: &HflSetup,
    plan: &MaskPlan,
    data: &Samples,
    mut on_round: F,
) -> Result<ModelState, ProtocolError>
where
    F: FnMut(u64, &ModelState) -> Result<(), ProtocolError>,
{
    setup.cfg.validate()?;
    let me = plan.self_id().clone();
    let scaffold = setup.cfg.aggregator == Aggregator::Scaffold;
    let layout = setup.arch.layout();
    let mut c_local: Option<Vec<f64>> = None;
    let mut expected_round = 0u64;
    loop {
        let msg = GlobalMsg::decode(&ch.recv(GLOBAL, &setup.assist)?)?;
        if msg.round != expected_round {
            return Err(ProtocolError::Violation(format!(
                "expected global model for round {expected_round}, got {}",
                msg.round
            )));
        }
        let global = ModelState::unflatten(layout.clone(), msg.values)?;
        if msg.round > 0 {
            on_round(msg.round - 1, &global)?;
        }
        if msg.last {
            return Ok(global);
        }
        let round = msg.round;
        let cl = c_local.get_or_insert_with(|| vec![0.0; global.len()]);
        let correction = scaffold.then(|| ScaffoldCorrection { c_local: cl.clone(), c_global: msg.c_global.clone() });
        let update = local_train(&global, &setup.arch, data, &setup.cfg, me.ordinal, round, correction.as_ref())?;
        let delta = if scaffold {
            let (_, delta) = scaffold_update_controls(
                cl,
                &msg.c_global,
                global.flatten(),
                update.state.flatten(),
                update.steps,
                setup.cfg.learning_rate,
            );
            let delta = delta.into_iter().map(|d| setup.fp.quantize(d)).collect::<Result<Vec<_>, _>>()?;
            for (c, d) in cl.iter_mut().zip(&delta) {
                *c += d;
            }
            Some(delta)
        } else {
            None
        };
        let payload = encode_secure_update(&update, delta.as_deref(), setup.fp)?;
        let masked = mask_update(&payload, plan, round)?;
        ch.send(&setup.assist, MASKED_UPDATE, masked.to_bytes())?;
        expected_round += 1;
    }
}
