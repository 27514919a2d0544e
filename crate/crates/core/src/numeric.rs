//! Fixed-point encoding into the ring Z/2^k and exact ring-vector arithmetic.
//!
//! Reals are scaled by `2^scale_bits`, rounded half away from zero and
//! embedded as two's-complement residues. Sums of encodings decode to the
//! sum of the decoded inputs as long as the running total stays inside the
//! signed headroom, which is what makes one-time-pad masking exact.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("invalid fixed-point parameters: scale_bits={scale_bits}, ring_bits={ring_bits}")]
    InvalidParams { scale_bits: u32, ring_bits: u32 },
    #[error("value {value} does not fit the fixed-point headroom (|x| < 2^{limit_log2})")]
    Overflow { value: f64, limit_log2: u32 },
    #[error("ring element {0} exceeds the ring modulus")]
    ElementOutOfRange(u64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("ring vectors use different fixed-point parameters")]
    ParamsMismatch,
}

/// Fixed-point format: `scale_bits` fractional bits inside a ring of `2^ring_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointParams {
    scale_bits: u32,
    ring_bits: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self { scale_bits: 24, ring_bits: 64 }
    }
}

impl FixedPointParams {
    pub fn new(scale_bits: u32, ring_bits: u32) -> Result<Self, NumericError> {
        if scale_bits >= ring_bits || ring_bits == 0 || ring_bits > 64 || !ring_bits.is_multiple_of(8) {
            return Err(NumericError::InvalidParams { scale_bits, ring_bits });
        }
        Ok(Self { scale_bits, ring_bits })
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn ring_bits(&self) -> u32 {
        self.ring_bits
    }

    /// Bytes needed to serialize one ring element.
    pub fn element_bytes(&self) -> usize {
        (self.ring_bits / 8) as usize
    }

    /// Bit mask selecting the residue mod 2^ring_bits.
    pub fn mask(&self) -> u64 {
        if self.ring_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.ring_bits) - 1
        }
    }

    /// Smallest power of two that no encodable magnitude reaches.
    pub fn headroom_log2(&self) -> u32 {
        self.ring_bits - self.scale_bits - 1
    }

    /// Quantization step `2^-scale_bits`.
    pub fn resolution(&self) -> f64 {
        libm::ldexp(1.0, -(self.scale_bits as i32))
    }

    pub fn encode(&self, x: f64) -> Result<u64, NumericError> {
        fp_encode(x, self)
    }

    pub fn decode(&self, e: u64) -> f64 {
        fp_decode(e, self)
    }

    /// `decode(encode(x))`: snaps `x` onto the fixed-point grid.
    pub fn quantize(&self, x: f64) -> Result<f64, NumericError> {
        Ok(self.decode(self.encode(x)?))
    }
}

/// `round(x * 2^scale_bits) mod 2^ring_bits`, rounding half away from zero.
pub fn fp_encode(x: f64, params: &FixedPointParams) -> Result<u64, NumericError> {
    let limit = libm::ldexp(1.0, params.headroom_log2() as i32);
    if !x.is_finite() || libm::fabs(x) >= limit {
        return Err(NumericError::Overflow { value: x, limit_log2: params.headroom_log2() });
    }
    let scaled = libm::round(libm::ldexp(x, params.scale_bits as i32));
    // |scaled| < 2^63 is guaranteed by the headroom check.
    let signed = scaled as i64;
    Ok((signed as u64) & params.mask())
}

/// Interprets `e` as a signed two's-complement residue and rescales.
pub fn fp_decode(e: u64, params: &FixedPointParams) -> f64 {
    let e = e & params.mask();
    let signed: i64 = if params.ring_bits == 64 {
        e as i64
    } else if e >> (params.ring_bits - 1) == 1 {
        (e as i64) - (1i64 << params.ring_bits)
    } else {
        e as i64
    };
    libm::ldexp(signed as f64, -(params.scale_bits as i32))
}

/// Fixed-length vector of ring elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingVector {
    elements: Vec<u64>,
    params: FixedPointParams,
}

impl RingVector {
    pub fn zeros(len: usize, params: FixedPointParams) -> Self {
        Self { elements: alloc::vec![0; len], params }
    }

    pub fn from_elements(elements: Vec<u64>, params: FixedPointParams) -> Result<Self, NumericError> {
        let mask = params.mask();
        if let Some(&bad) = elements.iter().find(|&&e| e & !mask != 0) {
            return Err(NumericError::ElementOutOfRange(bad));
        }
        Ok(Self { elements, params })
    }

    pub fn encode(values: &[f64], params: FixedPointParams) -> Result<Self, NumericError> {
        let elements = values
            .iter()
            .map(|&x| fp_encode(x, &params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { elements, params })
    }

    pub fn decode(&self) -> Vec<f64> {
        self.elements.iter().map(|&e| fp_decode(e, &self.params)).collect()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn params(&self) -> FixedPointParams {
        self.params
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    fn check_compatible(&self, other: &Self) -> Result<(), NumericError> {
        if self.params != other.params {
            return Err(NumericError::ParamsMismatch);
        }
        if self.len() != other.len() {
            return Err(NumericError::LengthMismatch { left: self.len(), right: other.len() });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NumericError> {
        self.check_compatible(other)?;
        let mask = self.params.mask();
        for (a, b) in self.elements.iter_mut().zip(&other.elements) {
            *a = a.wrapping_add(*b) & mask;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Self) -> Result<(), NumericError> {
        self.check_compatible(other)?;
        let mask = self.params.mask();
        for (a, b) in self.elements.iter_mut().zip(&other.elements) {
            *a = a.wrapping_sub(*b) & mask;
        }
        Ok(())
    }

    /// Additive inverse in the ring.
    pub fn neg(&self) -> Self {
        let mask = self.params.mask();
        Self {
            elements: self.elements.iter().map(|e| e.wrapping_neg() & mask).collect(),
            params: self.params,
        }
    }

    /// Little-endian serialization, `element_bytes` per element.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.params.element_bytes();
        let mut out = Vec::with_capacity(self.len() * width);
        for e in &self.elements {
            out.extend_from_slice(&e.to_le_bytes()[..width]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], params: FixedPointParams) -> Result<Self, NumericError> {
        let width = params.element_bytes();
        if !bytes.len().is_multiple_of(width) {
            return Err(NumericError::LengthMismatch { left: bytes.len(), right: width });
        }
        let elements = bytes
            .chunks_exact(width)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..width].copy_from_slice(chunk);
                u64::from_le_bytes(buf)
            })
            .collect();
        Ok(Self { elements, params })
    }
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Elementwise sum mod 2^ring_bits.
pub fn ring_add(a: &RingVector, b: &RingVector) -> Result<RingVector, NumericError> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> FixedPointParams {
        FixedPointParams::default()
    }

    #[test]
    fn encode_fixed_examples() {
        assert_eq!(fp_encode(0.0, &p()).unwrap(), 0);
        assert_eq!(fp_encode(1.0, &p()).unwrap(), 16_777_216);
        assert_eq!(fp_encode(-1.0, &p()).unwrap(), 0u64.wrapping_sub(1 << 24));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(fp_decode(0, &p()), 0.0);
        assert_eq!(fp_decode(fp_encode(3.5, &p()).unwrap(), &p()), 3.5);
        // 0.1 * 2^24 = 1677721.6 rounds to 1677722.
        let expected = 1_677_722.0 / 16_777_216.0;
        let got = fp_decode(fp_encode(0.1, &p()).unwrap(), &p());
        assert_eq!(got, expected);
        assert!((got - 0.1).abs() <= 1.0 / 16_777_216.0);
    }

    #[test]
    fn rounding_is_symmetric() {
        let params = FixedPointParams::new(1, 8).unwrap();
        // 0.25 * 2 = 0.5 rounds away from zero.
        assert_eq!(fp_encode(0.25, &params).unwrap(), 1);
        assert_eq!(fp_encode(-0.25, &params).unwrap(), 0xff);
    }

    #[test]
    fn overflow_rejected() {
        let limit = libm::ldexp(1.0, 39);
        assert!(matches!(fp_encode(limit, &p()), Err(NumericError::Overflow { .. })));
        assert!(fp_encode(limit - 1.0, &p()).is_ok());
        assert!(fp_encode(f64::NAN, &p()).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(FixedPointParams::new(24, 24).is_err());
        assert!(FixedPointParams::new(8, 60).is_err());
        assert!(FixedPointParams::new(8, 72).is_err());
        assert!(FixedPointParams::new(16, 32).is_ok());
    }

    #[test]
    fn small_ring_wraps() {
        let params = FixedPointParams::new(4, 16).unwrap();
        let e = fp_encode(-2.0, &params).unwrap();
        assert_eq!(e, 0x10000 - 32);
        assert_eq!(fp_decode(e, &params), -2.0);
    }

    #[test]
    fn ring_add_identity_and_inverse() {
        let v = RingVector::encode(&[1.5, -2.25, 7.0], p()).unwrap();
        let zero = RingVector::zeros(3, p());
        assert_eq!(ring_add(&v, &zero).unwrap(), v);
        let a = RingVector::encode(&[1.5], p()).unwrap();
        let b = RingVector::encode(&[-1.5], p()).unwrap();
        assert_eq!(ring_add(&a, &b).unwrap().elements(), &[0]);
        assert_eq!(ring_add(&v, &v.neg()).unwrap(), RingVector::zeros(3, p()));
    }

    #[test]
    fn ring_add_length_mismatch() {
        let a = RingVector::zeros(2, p());
        let b = RingVector::zeros(3, p());
        assert!(matches!(ring_add(&a, &b), Err(NumericError::LengthMismatch { .. })));
        let c = RingVector::zeros(2, FixedPointParams::new(16, 32).unwrap());
        assert_eq!(ring_add(&a, &c), Err(NumericError::ParamsMismatch));
    }

    #[test]
    fn from_elements_checks_range() {
        let params = FixedPointParams::new(8, 16).unwrap();
        assert!(RingVector::from_elements(alloc::vec![0x1_0000], params).is_err());
        assert!(RingVector::from_elements(alloc::vec![0xffff], params).is_ok());
    }

    #[test]
    fn bytes_roundtrip_narrow_ring() {
        let params = FixedPointParams::new(8, 24).unwrap();
        let v = RingVector::encode(&[-3.5, 100.25, 0.0], params).unwrap();
        let back = RingVector::from_bytes(&v.to_bytes(), params).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.to_bytes().len(), 9);
    }

    proptest! {
        #[test]
        fn roundtrip_within_resolution(x in -5.0e11f64..5.0e11) {
            let params = p();
            let back = fp_decode(fp_encode(x, &params).unwrap(), &params);
            prop_assert!((back - x).abs() <= params.resolution());
        }

        #[test]
        fn addition_is_homomorphic(x in -1.0e9f64..1.0e9, y in -1.0e9f64..1.0e9) {
            let params = p();
            let a = RingVector::encode(&[x], params).unwrap();
            let b = RingVector::encode(&[y], params).unwrap();
            let sum = ring_add(&a, &b).unwrap().decode()[0];
            prop_assert_eq!(sum, a.decode()[0] + b.decode()[0]);
        }

        #[test]
        fn summation_order_irrelevant(
            vals in proptest::collection::vec(proptest::collection::vec(any::<u64>(), 4), 2..6)
        ) {
            let params = p();
            let vecs: Vec<RingVector> = vals
                .into_iter()
                .map(|v| RingVector::from_elements(v, params).unwrap())
                .collect();
            let mut forward = RingVector::zeros(4, params);
            for v in &vecs {
                forward.add_assign(v).unwrap();
            }
            let mut backward = RingVector::zeros(4, params);
            for v in vecs.iter().rev() {
                backward.add_assign(v).unwrap();
            }
            prop_assert_eq!(forward, backward);
        }
    }

    #[test]
    fn sum_of_many_matches_real_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let params = p();
        for parties in 2..=6usize {
            let inputs: Vec<Vec<f64>> = (0..parties)
                .map(|_| (0..16).map(|_| rng.random_range(-1000.0..1000.0)).collect())
                .collect();
            let mut acc = RingVector::zeros(16, params);
            for v in &inputs {
                acc.add_assign(&RingVector::encode(v, params).unwrap()).unwrap();
            }
            let got = acc.decode();
            for i in 0..16 {
                let oracle: f64 = inputs.iter().map(|v| v[i]).sum();
                assert!((got[i] - oracle).abs() <= parties as f64 * params.resolution());
            }
        }
    }
}
