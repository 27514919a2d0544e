//! Paillier encryption with generator `g = n + 1`.
//!
//! Three encryption paths produce interchangeable ciphertexts:
//!
//! * [`paillier_encrypt_pk`]: DJN short-exponent randomization `h_n^a mod n^2`, where
//!   `h_n = h^n` is fixed at key generation and `a` has `djn_exp_bits` bits.
//! * [`paillier_encrypt_pk_full`]: textbook `r^n mod n^2` with a full-size `r`.
//! * [`paillier_encrypt_sk`]: the key owner computes `r^n` modulo `p^2` and `q^2`
//!   with exponents reduced by `phi(p^2)`, `phi(q^2)` and recombines.
//!
//! Decryption is CRT-based.

use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand_core::RngCore;
use sha2::{Digest, Sha256};

use super::bigint::{random_bits, random_blum_prime, random_unit};
use super::wire::{Reader, WireError, Writer};
use super::CryptoError;

pub const SUPPORTED_KEY_BITS: [u32; 4] = [512, 1024, 2048, 3072];
pub const MIN_DJN_EXP_BITS: u32 = 320;

/// DJN exponent length used at a given modulus size: 448 bits at 2048 and
/// above, the 320-bit floor below.
pub fn default_djn_exp_bits(key_bits: u32) -> u32 {
    if key_bits >= 2048 {
        448
    } else {
        MIN_DJN_EXP_BITS
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    h_n: BigUint,
    djn_exp_bits: u32,
    key_id: u64,
}

impl core::fmt::Debug for PaillierPublicKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PaillierPublicKey")
            .field("bits", &self.n.bits())
            .field("key_id", &format_args!("{:016x}", self.key_id))
            .finish()
    }
}

#[derive(Clone)]
pub struct PaillierPrivateKey {
    public: PaillierPublicKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    /// `L_p((1+n)^(p-1) mod p^2)^-1 mod p`
    hp: BigUint,
    hq: BigUint,
    p_inv_mod_q: BigUint,
    p_squared_inv_mod_q_squared: BigUint,
    /// `n mod p(p-1)`: reduced exponent for `r^n mod p^2`.
    n_mod_phi_p_squared: BigUint,
    n_mod_phi_q_squared: BigUint,
}

impl core::fmt::Debug for PaillierPrivateKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PaillierPrivateKey").field("public", &self.public).finish_non_exhaustive()
    }
}

/// Ciphertext bound to a key; `exponent` records the fixed-point scale
/// (fractional bits) of the embedded plaintext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierCiphertext {
    value: BigUint,
    key_id: u64,
    exponent: i32,
}

fn key_id_of(n: &BigUint) -> u64 {
    let digest = Sha256::digest(n.to_bytes_be());
    let mut id = [0u8; 8];
    id.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(id)
}

/// `L(x) = (x - 1) / d`
fn l_function(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u32) / d
}

/// Generates a balanced keypair with an exactly `key_bits`-bit modulus.
pub fn paillier_keygen<R: RngCore + ?Sized>(
    key_bits: u32,
    djn_exp_bits: u32,
    rng: &mut R,
) -> Result<(PaillierPublicKey, PaillierPrivateKey), CryptoError> {
    if !SUPPORTED_KEY_BITS.contains(&key_bits) {
        return Err(CryptoError::InvalidKeySize(key_bits));
    }
    if djn_exp_bits < MIN_DJN_EXP_BITS {
        return Err(CryptoError::InvalidDjnExponent(djn_exp_bits));
    }
    let half = u64::from(key_bits / 2);
    loop {
        let p = random_blum_prime(half, rng);
        let q = random_blum_prime(half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() != u64::from(key_bits) {
            continue;
        }
        return Ok(assemble_keypair(p, q, djn_exp_bits, rng));
    }
}

/// Builds a keypair from known primes. Used by tests that need a fixed key.
pub fn keypair_from_primes<R: RngCore + ?Sized>(
    p: BigUint,
    q: BigUint,
    djn_exp_bits: u32,
    rng: &mut R,
) -> Result<(PaillierPublicKey, PaillierPrivateKey), CryptoError> {
    if p == q || p.is_even() || q.is_even() || p.bits() != q.bits() {
        return Err(CryptoError::InvalidPrimes);
    }
    Ok(assemble_keypair(p, q, djn_exp_bits, rng))
}

fn assemble_keypair<R: RngCore + ?Sized>(
    p: BigUint,
    q: BigUint,
    djn_exp_bits: u32,
    rng: &mut R,
) -> (PaillierPublicKey, PaillierPrivateKey) {
    let n = &p * &q;
    let n_squared = &n * &n;
    let p_squared = &p * &p;
    let q_squared = &q * &q;
    let p_minus_1 = &p - 1u32;
    let q_minus_1 = &q - 1u32;
    let g = &n + 1u32;

    let hp = l_function(&g.modpow(&p_minus_1, &p_squared), &p)
        .modinv(&p)
        .expect("L_p(g^(p-1)) invertible for valid primes");
    let hq = l_function(&g.modpow(&q_minus_1, &q_squared), &q)
        .modinv(&q)
        .expect("L_q(g^(q-1)) invertible for valid primes");
    let p_inv_mod_q = p.modinv(&q).expect("distinct primes are coprime");
    let p_squared_inv_mod_q_squared =
        p_squared.modinv(&q_squared).expect("distinct prime squares are coprime");
    let n_mod_phi_p_squared = &n % (&p * &p_minus_1);
    let n_mod_phi_q_squared = &n % (&q * &q_minus_1);

    // DJN base: h = -x^2 mod n for a random unit x.
    let x = random_unit(rng, &n);
    let h = &n - (&x * &x) % &n;
    let h_n = h.modpow(&n, &n_squared);

    let public = PaillierPublicKey { key_id: key_id_of(&n), n, n_squared, h_n, djn_exp_bits };
    let private = PaillierPrivateKey {
        public: public.clone(),
        p,
        q,
        p_squared,
        q_squared,
        p_minus_1,
        q_minus_1,
        hp,
        hq,
        p_inv_mod_q,
        p_squared_inv_mod_q_squared,
        n_mod_phi_p_squared,
        n_mod_phi_q_squared,
    };
    (public, private)
}

impl PaillierPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn h_n(&self) -> &BigUint {
        &self.h_n
    }

    pub fn djn_exp_bits(&self) -> u32 {
        self.djn_exp_bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// `(1 + n)^m = 1 + m*n (mod n^2)`
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (m * &self.n + 1u32) % &self.n_squared
    }

    fn check_plaintext(&self, m: &BigUint) -> Result<(), CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(())
    }

    fn wrap(&self, value: BigUint) -> PaillierCiphertext {
        PaillierCiphertext { value, key_id: self.key_id, exponent: 0 }
    }

    /// Signed fixed-point embedding: `round(x * 2^scale_bits) mod n`.
    pub fn encode_fixed(&self, x: f64, scale_bits: u32) -> Result<BigUint, CryptoError> {
        let scaled = libm::round(libm::ldexp(x, scale_bits as i32));
        if !scaled.is_finite() || libm::fabs(scaled) >= libm::ldexp(1.0, 126) {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        self.encode_signed(&BigInt::from(scaled as i128))
    }

    /// Maps a signed integer with `|v| < n/2` into `[0, n)`.
    pub fn encode_signed(&self, v: &BigInt) -> Result<BigUint, CryptoError> {
        let magnitude = v.magnitude();
        if magnitude >= &(&self.n >> 1u32) {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(if v.sign() == Sign::Minus { &self.n - magnitude } else { magnitude.clone() })
    }

    /// Inverse of [`Self::encode_signed`]: residues above `n/2` are negative.
    pub fn decode_signed(&self, m: &BigUint) -> BigInt {
        let m = m % &self.n;
        if m > (&self.n >> 1u32) {
            BigInt::from_biguint(Sign::Minus, &self.n - m)
        } else {
            BigInt::from_biguint(Sign::Plus, m)
        }
    }

    pub fn decode_fixed(&self, m: &BigUint, scale_bits: i32) -> f64 {
        bigint_to_f64_scaled(&self.decode_signed(m), scale_bits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.biguint(&self.n).biguint(&self.h_n).u32(self.djn_exp_bits);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let n = r.biguint()?;
        let h_n = r.biguint()?;
        let djn_exp_bits = r.u32()?;
        r.finish()?;
        if n.is_even() || n.bits() < 64 {
            return Err(WireError::Malformed("paillier modulus"));
        }
        let n_squared = &n * &n;
        if h_n.is_zero() || h_n >= n_squared {
            return Err(WireError::Malformed("paillier djn base"));
        }
        Ok(Self { key_id: key_id_of(&n), n, n_squared, h_n, djn_exp_bits })
    }
}

/// `v / 2^scale_bits` as f64 without overflowing intermediate conversions.
fn bigint_to_f64_scaled(v: &BigInt, scale_bits: i32) -> f64 {
    let bits = v.bits() as i32;
    // Keep the top 64 significant bits, fold the rest into the exponent.
    let shift = (bits - 64).max(0);
    let top = (v.abs() >> shift as u32).to_u64().unwrap_or(u64::MAX) as f64;
    let signed = if v.is_negative() { -top } else { top };
    libm::ldexp(signed, shift - scale_bits)
}

impl PaillierPrivateKey {
    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }

    fn crt_combine_n_squared(&self, xp: &BigUint, xq: &BigUint) -> BigUint {
        // x = xp + p^2 * ((xq - xp) * (p^2)^-1 mod q^2)
        let xp_mod_q2 = xp % &self.q_squared;
        let diff = if xq >= &xp_mod_q2 {
            xq - &xp_mod_q2
        } else {
            xq + &self.q_squared - &xp_mod_q2
        };
        let t = (diff * &self.p_squared_inv_mod_q_squared) % &self.q_squared;
        xp + &self.p_squared * t
    }
}

impl PaillierCiphertext {
    pub fn from_parts(value: BigUint, key_id: u64, exponent: i32) -> Self {
        Self { value, key_id, exponent }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    /// Retags the fixed-point scale without touching the ciphertext.
    pub fn with_exponent(mut self, exponent: i32) -> Self {
        self.exponent = exponent;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.key_id).i32(self.exponent).biguint(&self.value);
        w.finish()
    }

    pub fn write(&self, w: &mut Writer) {
        w.u64(self.key_id).i32(self.exponent).biguint(&self.value);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let key_id = r.u64()?;
        let exponent = r.i32()?;
        let value = r.biguint()?;
        Ok(Self { value, key_id, exponent })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let ct = Self::read(&mut r)?;
        r.finish()?;
        Ok(ct)
    }
}

/// DJN encryption: `c = (1 + m n) * h_n^a mod n^2`, `a` of `djn_exp_bits` bits.
pub fn paillier_encrypt_pk<R: RngCore + ?Sized>(
    pk: &PaillierPublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<PaillierCiphertext, CryptoError> {
    pk.check_plaintext(m)?;
    let alpha = random_bits(rng, u64::from(pk.djn_exp_bits));
    let mask = pk.h_n.modpow(&alpha, &pk.n_squared);
    Ok(pk.wrap((pk.g_pow(m) * mask) % &pk.n_squared))
}

/// Textbook encryption: `c = (1 + m n) * r^n mod n^2`, `r` uniform in `Z_n^*`.
pub fn paillier_encrypt_pk_full<R: RngCore + ?Sized>(
    pk: &PaillierPublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<PaillierCiphertext, CryptoError> {
    pk.check_plaintext(m)?;
    let r = random_unit(rng, &pk.n);
    let mask = r.modpow(&pk.n, &pk.n_squared);
    Ok(pk.wrap((pk.g_pow(m) * mask) % &pk.n_squared))
}

/// Encryption by the key owner: `r^n` is evaluated modulo `p^2` and `q^2`
/// with reduced exponents, then recombined by CRT.
pub fn paillier_encrypt_sk<R: RngCore + ?Sized>(
    sk: &PaillierPrivateKey,
    pk: &PaillierPublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<PaillierCiphertext, CryptoError> {
    if pk.key_id != sk.public.key_id {
        return Err(CryptoError::KeyMismatch);
    }
    pk.check_plaintext(m)?;
    let r = random_unit(rng, &pk.n);
    let rp = (&r % &sk.p_squared).modpow(&sk.n_mod_phi_p_squared, &sk.p_squared);
    let rq = (&r % &sk.q_squared).modpow(&sk.n_mod_phi_q_squared, &sk.q_squared);
    let mask = sk.crt_combine_n_squared(&rp, &rq);
    Ok(pk.wrap((pk.g_pow(m) * mask) % &pk.n_squared))
}

/// CRT decryption, returns `m` in `[0, n)`.
pub fn paillier_decrypt(sk: &PaillierPrivateKey, ct: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
    if ct.key_id != sk.public.key_id {
        return Err(CryptoError::KeyMismatch);
    }
    if ct.value >= sk.public.n_squared {
        return Err(CryptoError::CiphertextOutOfRange);
    }
    let cp = (&ct.value % &sk.p_squared).modpow(&sk.p_minus_1, &sk.p_squared);
    let mp = (l_function(&cp, &sk.p) * &sk.hp) % &sk.p;
    let cq = (&ct.value % &sk.q_squared).modpow(&sk.q_minus_1, &sk.q_squared);
    let mq = (l_function(&cq, &sk.q) * &sk.hq) % &sk.q;
    // m = mp + p * ((mq - mp) * p^-1 mod q)
    let mp_mod_q = &mp % &sk.q;
    let diff = if mq >= mp_mod_q { mq - mp_mod_q } else { mq + &sk.q - mp_mod_q };
    let t = (diff * &sk.p_inv_mod_q) % &sk.q;
    Ok(mp + &sk.p * t)
}

/// Decrypts and interprets the plaintext as signed fixed point at the
/// ciphertext's exponent.
pub fn paillier_decrypt_fixed(sk: &PaillierPrivateKey, ct: &PaillierCiphertext) -> Result<f64, CryptoError> {
    let m = paillier_decrypt(sk, ct)?;
    Ok(sk.public.decode_fixed(&m, ct.exponent))
}

/// Homomorphic addition: decrypts to `(a + b) mod n`.
pub fn ct_add(
    pk: &PaillierPublicKey,
    a: &PaillierCiphertext,
    b: &PaillierCiphertext,
) -> Result<PaillierCiphertext, CryptoError> {
    if a.key_id != pk.key_id || b.key_id != pk.key_id {
        return Err(CryptoError::KeyMismatch);
    }
    if a.exponent != b.exponent {
        return Err(CryptoError::ExponentMismatch { left: a.exponent, right: b.exponent });
    }
    Ok(PaillierCiphertext {
        value: (&a.value * &b.value) % &pk.n_squared,
        key_id: pk.key_id,
        exponent: a.exponent,
    })
}

/// Scalar multiplication: decrypts to `(k * a) mod n`. The exponent is kept.
pub fn ct_mul_scalar(
    pk: &PaillierPublicKey,
    a: &PaillierCiphertext,
    k: &BigUint,
) -> Result<PaillierCiphertext, CryptoError> {
    if a.key_id != pk.key_id {
        return Err(CryptoError::KeyMismatch);
    }
    if k >= &pk.n {
        return Err(CryptoError::ScalarOutOfRange);
    }
    Ok(PaillierCiphertext {
        value: a.value.modpow(k, &pk.n_squared),
        key_id: pk.key_id,
        exponent: a.exponent,
    })
}

/// Multiplies by a signed fixed-point scalar `round(x * 2^scale_bits)`;
/// the result's exponent is the sum of both scales.
pub fn ct_mul_fixed(
    pk: &PaillierPublicKey,
    a: &PaillierCiphertext,
    x: f64,
    scale_bits: u32,
) -> Result<PaillierCiphertext, CryptoError> {
    let k = pk.encode_fixed(x, scale_bits)?;
    let mut out = ct_mul_scalar(pk, a, &k)?;
    out.exponent = a.exponent + scale_bits as i32;
    Ok(out)
}

/// Encrypted zero that needs no randomness; the identity for [`ct_add`].
pub fn ct_zero(pk: &PaillierPublicKey, exponent: i32) -> PaillierCiphertext {
    PaillierCiphertext { value: BigUint::one(), key_id: pk.key_id, exponent }
}
