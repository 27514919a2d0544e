//! Two fixed-point values (gradient, hessian) packed into one plaintext.
//!
//! Layout: `slot(g) << slot_bits | slot(h)`. Each slot holds
//! `round(x * 2^scale) + bias` with `bias = 2^(slot_bits - headroom - 1)`,
//! so a slot is nonnegative and below `2^(slot_bits - headroom)`. Up to
//! `2^headroom` packed values can be summed without carrying into the
//! neighbouring slot; unpacking subtracts `count * bias`.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::CryptoError;
use crate::numeric::FixedPointParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackParams {
    pub slot_bits: u32,
    pub count_headroom_bits: u32,
}

impl Default for PackParams {
    fn default() -> Self {
        Self { slot_bits: 96, count_headroom_bits: 21 }
    }
}

impl PackParams {
    pub fn new(slot_bits: u32, count_headroom_bits: u32) -> Result<Self, CryptoError> {
        if slot_bits > 126 || count_headroom_bits + 2 >= slot_bits {
            return Err(CryptoError::InvalidPackParams);
        }
        Ok(Self { slot_bits, count_headroom_bits })
    }

    /// Plaintext bits consumed by a packed pair.
    pub fn packed_bits(&self) -> u32 {
        2 * self.slot_bits
    }

    /// Checks that a packed pair fits a plaintext space of `plaintext_bits`.
    pub fn check_capacity(&self, plaintext_bits: u64) -> Result<(), CryptoError> {
        if u64::from(self.packed_bits()) >= plaintext_bits {
            return Err(CryptoError::InvalidPackParams);
        }
        Ok(())
    }

    pub fn max_count(&self) -> u64 {
        1u64 << self.count_headroom_bits
    }

    fn bias(&self) -> i128 {
        1i128 << (self.slot_bits - self.count_headroom_bits - 1)
    }

    fn slot_mask(&self) -> u128 {
        (1u128 << self.slot_bits) - 1
    }

    fn encode_slot(&self, x: f64, fp: &FixedPointParams) -> Result<u128, CryptoError> {
        let limit_log2 = self.slot_bits as i32 - fp.scale_bits() as i32 - self.count_headroom_bits as i32 - 1;
        if !x.is_finite() || limit_log2 <= 0 || libm::fabs(x) >= libm::ldexp(1.0, limit_log2) {
            return Err(CryptoError::SlotOverflow);
        }
        let scaled = libm::round(libm::ldexp(x, fp.scale_bits() as i32)) as i128;
        Ok((scaled + self.bias()) as u128)
    }

    fn decode_slot(&self, slot: u128, count: u64, fp: &FixedPointParams) -> f64 {
        let centered = slot as i128 - self.bias() * count as i128;
        libm::ldexp(centered as f64, -(fp.scale_bits() as i32))
    }
}

/// `enc(g) * 2^slot_bits + enc(h)`
pub fn pack_pair(g: f64, h: f64, pp: &PackParams, fp: &FixedPointParams) -> Result<BigUint, CryptoError> {
    let hi = pp.encode_slot(g, fp)?;
    let lo = pp.encode_slot(h, fp)?;
    Ok((BigUint::from(hi) << pp.slot_bits) | BigUint::from(lo))
}

/// Splits a (possibly summed) packed value produced from `count` pairs.
pub fn unpack_pair(v: &BigUint, count: u64, pp: &PackParams, fp: &FixedPointParams) -> Result<(f64, f64), CryptoError> {
    if count > pp.max_count() {
        return Err(CryptoError::CountExceedsHeadroom { count, max: pp.max_count() });
    }
    if v.bits() > u64::from(pp.packed_bits()) {
        return Err(CryptoError::SlotOverflow);
    }
    let mask = BigUint::from(pp.slot_mask());
    let lo = (v & &mask).to_u128().expect("masked to slot width");
    let hi = (v >> pp.slot_bits).to_u128().expect("bounded by packed width");
    Ok((pp.decode_slot(hi, count, fp), pp.decode_slot(lo, count, fp)))
}
