//! Vertical logistic regression without a coordinator.
//!
//! Per batch: trainers send plaintext partial scores, the label trainer
//! returns encrypted residuals, each trainer returns its encrypted gradient
//! plus a random mask, the label trainer decrypts the masked values and the
//! trainer removes its mask. The label trainer holds the only Paillier key.

use num_bigint::BigUint;
use rand::RngCore;
use xfl_core::crypto::paillier::default_djn_exp_bits;
use xfl_core::crypto::wire::{Reader, Writer};
use xfl_core::crypto::{paillier_decrypt, paillier_keygen, PaillierPublicKey};
use xfl_core::vertical::{
    batch_schedule, encrypt_residuals, encrypted_gradient, mask_gradient, plain_gradient, residuals,
    unmask_gradient, VlrParams, VlrPartyState,
};
use xfl_core::sigmoid;

use super::{read_cts, write_cts, ProtocolError};
use crate::transport::Channel;

pub const PUBLIC_KEY: &str = "vlr/public_key";
pub const PARTIAL_SCORE: &str = "vlr/partial_score";
pub const ENC_RESIDUAL: &str = "vlr/enc_residual";
pub const ENC_GRAD: &str = "vlr/enc_grad";
pub const MASKED_GRAD: &str = "vlr/masked_grad";
pub const PREDICT: &str = "vlr/predict";

/// What one party computed for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    pub epoch: u32,
    pub batch: usize,
    pub indices: Vec<usize>,
    /// Parameters the gradient was taken at.
    pub before: VlrPartyState,
    pub gradient: Vec<f64>,
    pub grad_intercept: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VlrSetup {
    pub label: String,
    pub trainers: Vec<String>,
    pub params: VlrParams,
}

fn f64_msg(v: &[f64]) -> Vec<u8> {
    let mut w = Writer::new();
    w.f64_slice(v);
    w.finish()
}

fn read_f64_msg(b: &[u8]) -> Result<Vec<f64>, ProtocolError> {
    let mut r = Reader::new(b);
    let v = r.f64_vec()?;
    r.finish()?;
    Ok(v)
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), ProtocolError> {
    if got != expected {
        return Err(ProtocolError::Violation(format!("{what}: expected {expected} values, got {got}")));
    }
    Ok(())
}

/// Label-trainer side. `on_epoch(epoch, probabilities)` receives the
/// pre-update probability of every row as seen during that epoch.
pub fn vlr_label_trainer<R, B, E>(
    ch: &Channel,
    setup: &VlrSetup,
    rows: &[Vec<f64>],
    labels: &[f64],
    rng: &mut R,
    mut on_batch: B,
    mut on_epoch: E,
) -> Result<VlrPartyState, ProtocolError>
where
    R: RngCore + ?Sized,
    B: FnMut(&BatchTrace),
    E: FnMut(u32, &[f64]) -> Result<(), ProtocolError>,
{
    let p = setup.params;
    p.validate()?;
    check_len("labels", labels.len(), rows.len())?;
    let n_features = rows.first().map_or(0, Vec::len);
    let (pk, sk) = paillier_keygen(p.key_bits, default_djn_exp_bits(p.key_bits), rng)?;
    ch.broadcast(&setup.trainers, PUBLIC_KEY, &pk.to_bytes())?;

    let mut state = VlrPartyState::zeros(n_features, true);
    let mut probs = vec![0.0; rows.len()];
    for epoch in 0..p.epochs {
        for (b, idx) in batch_schedule(rows.len(), p.batch_size, p.seed, epoch).into_iter().enumerate() {
            let mut z = state.partial_scores(rows, &idx);
            for (name, bytes) in ch.gather(&setup.trainers, PARTIAL_SCORE)? {
                let u = read_f64_msg(&bytes)?;
                check_len(&format!("partial scores from {name}"), u.len(), idx.len())?;
                for (zi, ui) in z.iter_mut().zip(&u) {
                    *zi += ui;
                }
            }
            let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            let d = residuals(&z, &y);
            for (&i, &zi) in idx.iter().zip(&z) {
                probs[i] = sigmoid(zi);
            }

            let enc = encrypt_residuals(&sk, &d, rng)?;
            let mut w = Writer::new();
            write_cts(&mut w, &enc);
            ch.broadcast(&setup.trainers, ENC_RESIDUAL, &w.finish())?;

            let (grad, g0) = plain_gradient(&d, rows, &idx, n_features);
            let before = state.clone();
            state.step(&grad, Some(g0), p.learning_rate);
            on_batch(&BatchTrace { epoch, batch: b, indices: idx, before, gradient: grad, grad_intercept: Some(g0) });

            for (name, bytes) in ch.gather(&setup.trainers, ENC_GRAD)? {
                let mut r = Reader::new(&bytes);
                let cts = read_cts(&mut r)?;
                r.finish()?;
                let mut w = Writer::new();
                w.u32(cts.len() as u32);
                for ct in &cts {
                    w.biguint(&paillier_decrypt(&sk, ct)?);
                }
                ch.send(&name, MASKED_GRAD, w.finish())?;
            }
        }
        on_epoch(epoch, &probs)?;
    }
    Ok(state)
}

/// Trainer side.
pub fn vlr_trainer<R, B>(
    ch: &Channel,
    setup: &VlrSetup,
    rows: &[Vec<f64>],
    rng: &mut R,
    mut on_batch: B,
) -> Result<VlrPartyState, ProtocolError>
where
    R: RngCore + ?Sized,
    B: FnMut(&BatchTrace),
{
    let p = setup.params;
    p.validate()?;
    let n_features = rows.first().map_or(0, Vec::len);
    let pk = PaillierPublicKey::from_bytes(&ch.recv(PUBLIC_KEY, &setup.label)?)?;
    let mut state = VlrPartyState::zeros(n_features, false);
    for epoch in 0..p.epochs {
        for (b, idx) in batch_schedule(rows.len(), p.batch_size, p.seed, epoch).into_iter().enumerate() {
            ch.send(&setup.label, PARTIAL_SCORE, f64_msg(&state.partial_scores(rows, &idx)))?;

            let bytes = ch.recv(ENC_RESIDUAL, &setup.label)?;
            let mut r = Reader::new(&bytes);
            let enc_d = read_cts(&mut r)?;
            r.finish()?;
            check_len("encrypted residuals", enc_d.len(), idx.len())?;
            let batch_rows: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
            let enc_grad = encrypted_gradient(&pk, &enc_d, &batch_rows)?;
            let exponent = enc_grad.first().map(|c| c.exponent());
            let (masked, masks) = mask_gradient(&pk, &enc_grad, rng)?;
            let mut w = Writer::new();
            write_cts(&mut w, &masked);
            ch.send(&setup.label, ENC_GRAD, w.finish())?;

            let bytes = ch.recv(MASKED_GRAD, &setup.label)?;
            let mut r = Reader::new(&bytes);
            let k = r.u32()? as usize;
            check_len("masked gradient", k, n_features)?;
            let residues: Vec<BigUint> = (0..k).map(|_| r.biguint()).collect::<Result<_, _>>()?;
            r.finish()?;
            let grad = match exponent {
                Some(e) => unmask_gradient(&pk, &residues, &masks, e, idx.len())?,
                None => Vec::new(),
            };
            let before = state.clone();
            state.step(&grad, None, p.learning_rate);
            on_batch(&BatchTrace { epoch, batch: b, indices: idx, before, gradient: grad, grad_intercept: None });
        }
    }
    Ok(state)
}

/// Label-trainer side of inference: probabilities for every row.
pub fn vlr_predict_label(
    ch: &Channel,
    setup: &VlrSetup,
    state: &VlrPartyState,
    rows: &[Vec<f64>],
) -> Result<Vec<f64>, ProtocolError> {
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut z = state.partial_scores(rows, &all);
    for (name, bytes) in ch.gather(&setup.trainers, PREDICT)? {
        let u = read_f64_msg(&bytes)?;
        check_len(&format!("prediction scores from {name}"), u.len(), rows.len())?;
        for (zi, ui) in z.iter_mut().zip(&u) {
            *zi += ui;
        }
    }
    Ok(z.into_iter().map(sigmoid).collect())
}

pub fn vlr_predict_trainer(
    ch: &Channel,
    setup: &VlrSetup,
    state: &VlrPartyState,
    rows: &[Vec<f64>],
) -> Result<(), ProtocolError> {
    let all: Vec<usize> = (0..rows.len()).collect();
    ch.send(&setup.label, PREDICT, f64_msg(&state.partial_scores(rows, &all)))?;
    Ok(())
}
