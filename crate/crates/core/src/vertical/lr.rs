use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint, Sign};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use super::VerticalError;
use crate::crypto::bigint::random_below;
use crate::crypto::{
    ct_add, ct_mul_scalar, ct_zero, paillier_encrypt_pk, paillier_encrypt_sk, CryptoError, PaillierCiphertext,
    PaillierPrivateKey, PaillierPublicKey,
};
use crate::horizontal::mix_seed;
use crate::numeric::sigmoid;

/// Fixed-point scale of encrypted residuals and of feature values
/// multiplied into them.
pub const RESIDUAL_SCALE_BITS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VlrParams {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub key_bits: u32,
    pub seed: u64,
}

impl Default for VlrParams {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 2048, learning_rate: 0.1, key_bits: 2048, seed: 0 }
    }
}

impl VlrParams {
    pub fn validate(&self) -> Result<(), VerticalError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(VerticalError::InvalidParams("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(VerticalError::InvalidParams("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One party's share of the model; only the label trainer has an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlrPartyState {
    pub weights: Vec<f64>,
    pub intercept: Option<f64>,
}

impl VlrPartyState {
    pub fn zeros(n_features: usize, with_intercept: bool) -> Self {
        Self { weights: alloc::vec![0.0; n_features], intercept: with_intercept.then_some(0.0) }
    }

    /// `x_i . w (+ b)` for each `i` in `idx`.
    pub fn partial_scores(&self, rows: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .map(|&i| rows[i].iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.intercept.unwrap_or(0.0))
            .collect()
    }

    pub fn step(&mut self, grad: &[f64], grad_intercept: Option<f64>, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        if let (Some(b), Some(g)) = (self.intercept.as_mut(), grad_intercept) {
            *b -= lr * g;
        }
    }
}

/// Mini-batches of a seeded per-epoch shuffle; every party derives the same
/// schedule from the shared seed.
pub fn batch_schedule(n: usize, batch_size: usize, seed: u64, epoch: u32) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(mix_seed(&[seed, u64::from(epoch)])));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// `sigmoid(z_i) - y_i`
pub fn residuals(z: &[f64], y: &[f64]) -> Vec<f64> {
    z.iter().zip(y).map(|(&z, &y)| sigmoid(z) - y).collect()
}

/// Label-trainer side: residuals encrypted on the secret-key path at
/// [`RESIDUAL_SCALE_BITS`].
pub fn encrypt_residuals<R: RngCore + ?Sized>(
    sk: &PaillierPrivateKey,
    d: &[f64],
    rng: &mut R,
) -> Result<Vec<PaillierCiphertext>, VerticalError> {
    let pk = sk.public_key();
    d.iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(VerticalError::NonFinite("residual"));
            }
            let m = pk.encode_fixed(v, RESIDUAL_SCALE_BITS)?;
            Ok(paillier_encrypt_sk(sk, pk, &m, rng)?.with_exponent(RESIDUAL_SCALE_BITS as i32))
        })
        .collect()
}

/// `E(k * a)` for a signed `k`; negative scalars go through the ciphertext
/// inverse so the exponent stays short.
pub fn ct_mul_signed(
    pk: &PaillierPublicKey,
    a: &PaillierCiphertext,
    k: &BigInt,
) -> Result<PaillierCiphertext, CryptoError> {
    match k.sign() {
        Sign::Minus => {
            let inv = a.value().modinv(pk.n_squared()).ok_or(CryptoError::CiphertextOutOfRange)?;
            let neg = PaillierCiphertext::from_parts(inv, a.key_id(), a.exponent());
            ct_mul_scalar(pk, &neg, k.magnitude())
        }
        _ => ct_mul_scalar(pk, a, k.magnitude()),
    }
}

/// Trainer side: `E(sum_i d_i x_ij)` per feature `j` over the batch, at
/// exponent `2 * RESIDUAL_SCALE_BITS`. `batch_rows[i]` holds the trainer's
/// features of the `i`-th batch sample.
pub fn encrypted_gradient(
    pk: &PaillierPublicKey,
    enc_d: &[PaillierCiphertext],
    batch_rows: &[&[f64]],
) -> Result<Vec<PaillierCiphertext>, VerticalError> {
    if enc_d.len() != batch_rows.len() {
        return Err(VerticalError::LengthMismatch(enc_d.len(), batch_rows.len()));
    }
    let n_features = batch_rows.first().map_or(0, |r| r.len());
    let exponent = enc_d.first().map_or(RESIDUAL_SCALE_BITS as i32, |c| c.exponent()) + RESIDUAL_SCALE_BITS as i32;
    let mut out: Vec<PaillierCiphertext> = (0..n_features).map(|_| ct_zero(pk, exponent)).collect();
    for (ct, row) in enc_d.iter().zip(batch_rows) {
        for (acc, &x) in out.iter_mut().zip(row.iter()) {
            if !x.is_finite() {
                return Err(VerticalError::NonFinite("feature"));
            }
            let k = libm::round(libm::ldexp(x, RESIDUAL_SCALE_BITS as i32));
            if k == 0.0 {
                continue;
            }
            let term = ct_mul_signed(pk, ct, &BigInt::from(k as i128))?.with_exponent(exponent);
            *acc = ct_add(pk, acc, &term)?;
        }
    }
    Ok(out)
}

/// Adds `E(r_j)` with `r_j` uniform in `[0, n)`; returns the masked
/// ciphertexts and the masks.
pub fn mask_gradient<R: RngCore + ?Sized>(
    pk: &PaillierPublicKey,
    enc_grad: &[PaillierCiphertext],
    rng: &mut R,
) -> Result<(Vec<PaillierCiphertext>, Vec<BigUint>), VerticalError> {
    let mut masked = Vec::with_capacity(enc_grad.len());
    let mut masks = Vec::with_capacity(enc_grad.len());
    for ct in enc_grad {
        let r = random_below(rng, pk.n());
        let er = paillier_encrypt_pk(pk, &r, rng)?.with_exponent(ct.exponent());
        masked.push(ct_add(pk, ct, &er)?);
        masks.push(r);
    }
    Ok((masked, masks))
}

/// Trainer side: removes the masks from the decrypted residues and returns
/// the batch-mean gradient.
pub fn unmask_gradient(
    pk: &PaillierPublicKey,
    masked: &[BigUint],
    masks: &[BigUint],
    exponent: i32,
    batch_len: usize,
) -> Result<Vec<f64>, VerticalError> {
    if masked.len() != masks.len() {
        return Err(VerticalError::LengthMismatch(masked.len(), masks.len()));
    }
    let n = pk.n();
    Ok(masked
        .iter()
        .zip(masks)
        .map(|(m, r)| {
            let v = (m % n + n - r % n) % n;
            pk.decode_fixed(&v, exponent) / batch_len as f64
        })
        .collect())
}

/// Batch-mean `(sum_i d_i x_i, sum_i d_i) / B` over `idx`.
pub fn plain_gradient(d: &[f64], rows: &[Vec<f64>], idx: &[usize], n_features: usize) -> (Vec<f64>, f64) {
    let mut grad = alloc::vec![0.0; n_features];
    let mut g0 = 0.0;
    for (&di, &i) in d.iter().zip(idx) {
        for (g, x) in grad.iter_mut().zip(&rows[i]) {
            *g += di * x;
        }
        g0 += di;
    }
    let b = idx.len() as f64;
    for g in &mut grad {
        *g /= b;
    }
    (grad, g0 / b)
}
