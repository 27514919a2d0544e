//! Finite-field Diffie-Hellman over the RFC 7919 `ffdhe2048` group.

use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::One;
use rand_core::RngCore;

use super::bigint::random_bits;
use super::CryptoError;

/// Bits of entropy in a private exponent.
pub const DH_PRIVATE_BITS: u64 = 256;

const FFDHE2048_P: &str = concat!(
    "FFFFFFFFFFFFFFFFADF85458A2BB4A9AAFDC5620273D3CF1",
    "D8B9C583CE2D3695A9E13641146433FBCC939DCE249B3EF9",
    "7D2FE363630C75D8F681B202AEC4617AD3DF1ED5D5FD6561",
    "2433F51F5F066ED0856365553DED1AF3B557135E7F57C935",
    "984F0C70E0E68B77E2A689DAF3EFE8721DF158A136ADE735",
    "30ACCA4F483A797ABC0AB182B324FB61D108A94BB2C8E3FB",
    "B96ADAB760D7F4681D4F42A3DE394DF4AE56EDE76372BB19",
    "0B07A7C8EE0A6D709E02FCE1CDF7E2ECC03404CD28342F61",
    "9172FE9CE98583FF8E4F1232EEF28183C3FE3B1B4C6FAD73",
    "3BB5FCBC2EC22005C58EF1837D1683B2C6F34A26C1B2EFFA",
    "886B423861285C97FFFFFFFFFFFFFFFF",
);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhParams {
    p: BigUint,
    g: BigUint,
    group_name: &'static str,
}

impl DhParams {
    pub fn ffdhe2048() -> Self {
        Self {
            p: BigUint::parse_bytes(FFDHE2048_P.as_bytes(), 16).expect("valid group constant"),
            g: BigUint::from(2u32),
            group_name: "ffdhe2048",
        }
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn group_name(&self) -> &'static str {
        self.group_name
    }

    /// Fixed width of encoded group elements.
    pub fn element_bytes(&self) -> usize {
        self.p.bits().div_ceil(8) as usize
    }

    fn check_peer(&self, value: &BigUint) -> Result<(), CryptoError> {
        let p_minus_1 = &self.p - 1u32;
        if value <= &BigUint::one() || value >= &p_minus_1 {
            return Err(CryptoError::DegeneratePeerValue);
        }
        Ok(())
    }
}

/// Private exponent.
#[derive(Clone)]
pub struct DhPrivateKey(BigUint);

impl DhPrivateKey {
    pub fn from_exponent(x: BigUint) -> Self {
        Self(x)
    }
}

/// Draws a 256-bit private exponent and returns it with `g^x mod p`.
pub fn dh_keygen<R: RngCore + ?Sized>(params: &DhParams, rng: &mut R) -> (DhPrivateKey, BigUint) {
    loop {
        let x = random_bits(rng, DH_PRIVATE_BITS);
        if x.bits() < 2 {
            continue;
        }
        let public = params.g.modpow(&x, &params.p);
        if params.check_peer(&public).is_ok() {
            return (DhPrivateKey(x), public);
        }
    }
}

/// `peer^x mod p` as a fixed-width big-endian byte string.
pub fn dh_shared(
    private: &DhPrivateKey,
    peer_public: &BigUint,
    params: &DhParams,
) -> Result<Vec<u8>, CryptoError> {
    params.check_peer(peer_public)?;
    let shared = peer_public.modpow(&private.0, &params.p);
    Ok(to_fixed_width(&shared, params.element_bytes()))
}

pub fn to_fixed_width(v: &BigUint, width: usize) -> Vec<u8> {
    let raw = v.to_bytes_be();
    let mut out = vec![0u8; width.saturating_sub(raw.len())];
    out.extend_from_slice(&raw[raw.len().saturating_sub(width)..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn group_constant_shape() {
        let params = DhParams::ffdhe2048();
        assert_eq!(params.p().bits(), 2048);
        assert_eq!(params.element_bytes(), 256);
        assert_eq!(params.group_name(), "ffdhe2048");
    }

    #[test]
    fn both_sides_agree() {
        let params = DhParams::ffdhe2048();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (a, pub_a) = dh_keygen(&params, &mut rng);
        let (b, pub_b) = dh_keygen(&params, &mut rng);
        let one = BigUint::one();
        assert!(pub_a > one && pub_a < params.p() - 1u32);
        let s1 = dh_shared(&a, &pub_b, &params).unwrap();
        let s2 = dh_shared(&b, &pub_a, &params).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 256);
    }

    #[test]
    fn known_answer_against_modexp_oracle() {
        // Square-and-multiply written out independently of BigUint::modpow.
        fn oracle_pow(base: &BigUint, exp: u64, m: &BigUint) -> BigUint {
            let mut result = BigUint::one();
            let mut b = base % m;
            let mut e = exp;
            while e > 0 {
                if e & 1 == 1 {
                    result = (&result * &b) % m;
                }
                b = (&b * &b) % m;
                e >>= 1;
            }
            result
        }
        let params = DhParams::ffdhe2048();
        let (xa, xb) = (0x1234_5678_9abc_def1u64, 0x0fed_cba9_8765_4321u64);
        let a = DhPrivateKey::from_exponent(BigUint::from(xa));
        let b = DhPrivateKey::from_exponent(BigUint::from(xb));
        let pub_a = oracle_pow(params.g(), xa, params.p());
        let pub_b = oracle_pow(params.g(), xb, params.p());
        let expected = oracle_pow(&pub_a, xb, params.p());
        assert_eq!(dh_shared(&b, &pub_a, &params).unwrap(), to_fixed_width(&expected, 256));
        assert_eq!(dh_shared(&a, &pub_b, &params).unwrap(), to_fixed_width(&expected, 256));
    }

    #[test]
    fn degenerate_peers_rejected() {
        let params = DhParams::ffdhe2048();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let (a, _) = dh_keygen(&params, &mut rng);
        for bad in [BigUint::from(0u32), BigUint::one(), params.p() - 1u32, params.p().clone()] {
            assert_eq!(dh_shared(&a, &bad, &params).unwrap_err(), CryptoError::DegeneratePeerValue);
        }
    }

    #[test]
    fn fixed_width_pads() {
        assert_eq!(to_fixed_width(&BigUint::from(0x0102u32), 4), [0, 0, 1, 2]);
    }
}
