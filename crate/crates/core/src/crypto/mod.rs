//! Cryptographic building blocks: Paillier (DJN and CRT fast paths), FFDHE
//! key exchange, HMAC_DRBG, HKDF seed derivation and plaintext packing.

pub mod bigint;
pub mod dh;
pub mod drbg;
pub mod packing;
pub mod paillier;
pub mod wire;

use thiserror::Error;

pub use dh::{dh_keygen, dh_shared, DhParams, DhPrivateKey};
pub use drbg::{hkdf_sha256, kdf, HmacDrbg};
pub use packing::{pack_pair, unpack_pair, PackParams};
pub use paillier::{
    ct_add, ct_mul_fixed, ct_mul_scalar, ct_zero, paillier_decrypt, paillier_decrypt_fixed, paillier_encrypt_pk,
    paillier_encrypt_pk_full, paillier_encrypt_sk, paillier_keygen, PaillierCiphertext, PaillierPrivateKey,
    PaillierPublicKey,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported paillier key size {0} (expected 512, 1024, 2048 or 3072)")]
    InvalidKeySize(u32),
    #[error("djn exponent of {0} bits is below the 320-bit minimum")]
    InvalidDjnExponent(u32),
    #[error("invalid prime pair")]
    InvalidPrimes,
    #[error("plaintext outside [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertext outside [0, n^2)")]
    CiphertextOutOfRange,
    #[error("scalar outside [0, n)")]
    ScalarOutOfRange,
    #[error("ciphertext belongs to a different key")]
    KeyMismatch,
    #[error("fixed-point exponent mismatch: {left} vs {right}")]
    ExponentMismatch { left: i32, right: i32 },
    #[error("degenerate diffie-hellman peer value")]
    DegeneratePeerValue,
    #[error("kdf context must not be empty")]
    EmptyContext,
    #[error("drbg request of {0} bytes exceeds the per-request limit")]
    RequestTooLarge(usize),
    #[error("drbg reseed required")]
    ReseedRequired,
    #[error("packed slot overflow")]
    SlotOverflow,
    #[error("unpack count {count} exceeds headroom {max}")]
    CountExceedsHeadroom { count: u64, max: u64 },
    #[error("invalid packing parameters")]
    InvalidPackParams,
}
