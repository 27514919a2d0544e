//! HMAC_DRBG (SHA-256) without prediction resistance, plus the HKDF-based
//! seed derivation used to bind mask seeds to a session and party pair.

use alloc::vec;
use alloc::vec::Vec;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::CryptoError;

type HmacSha256 = Hmac<Sha256>;

/// Largest single `generate` request, in bytes.
pub const MAX_REQUEST_BYTES: usize = 1 << 16;
/// Requests allowed between reseeds.
pub const RESEED_INTERVAL: u64 = 1 << 48;

const KDF_SALT: &[u8] = b"xfl-secagg-kdf-v1";

fn hmac_parts(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

#[derive(Clone)]
pub struct HmacDrbg {
    key: [u8; 32],
    v: [u8; 32],
    reseed_counter: u64,
}

impl core::fmt::Debug for HmacDrbg {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HmacDrbg").field("reseed_counter", &self.reseed_counter).finish_non_exhaustive()
    }
}

impl HmacDrbg {
    pub fn new(entropy: &[u8], nonce: &[u8], personalization: &[u8]) -> Self {
        let mut drbg = Self { key: [0u8; 32], v: [1u8; 32], reseed_counter: 1 };
        drbg.update(&[entropy, nonce, personalization]);
        drbg
    }

    fn update(&mut self, provided: &[&[u8]]) {
        let has_data = provided.iter().any(|p| !p.is_empty());
        let mut parts: Vec<&[u8]> = vec![&self.v, &[0u8]];
        parts.extend_from_slice(provided);
        self.key = hmac_parts(&self.key, &parts);
        self.v = hmac_parts(&self.key, &[&self.v]);
        if has_data {
            let mut parts: Vec<&[u8]> = vec![&self.v, &[1u8]];
            parts.extend_from_slice(provided);
            self.key = hmac_parts(&self.key, &parts);
            self.v = hmac_parts(&self.key, &[&self.v]);
        }
    }

    pub fn reseed(&mut self, entropy: &[u8], additional: &[u8]) {
        self.update(&[entropy, additional]);
        self.reseed_counter = 1;
    }

    pub fn reseed_counter(&self) -> u64 {
        self.reseed_counter
    }

    /// Fills `out` (at most [`MAX_REQUEST_BYTES`]) and advances the state.
    pub fn fill(&mut self, out: &mut [u8], additional: &[u8]) -> Result<(), CryptoError> {
        if out.len() > MAX_REQUEST_BYTES {
            return Err(CryptoError::RequestTooLarge(out.len()));
        }
        if self.reseed_counter > RESEED_INTERVAL {
            return Err(CryptoError::ReseedRequired);
        }
        if !additional.is_empty() {
            self.update(&[additional]);
        }
        for chunk in out.chunks_mut(32) {
            self.v = hmac_parts(&self.key, &[&self.v]);
            chunk.copy_from_slice(&self.v[..chunk.len()]);
        }
        self.update(&[additional]);
        self.reseed_counter += 1;
        Ok(())
    }

    pub fn generate(&mut self, n_bytes: usize) -> Result<Vec<u8>, CryptoError> {
        let mut out = vec![0u8; n_bytes];
        self.fill(&mut out, &[])?;
        Ok(out)
    }

    /// Arbitrary-length stream built from successive maximal requests.
    pub fn generate_stream(&mut self, n_bytes: usize) -> Result<Vec<u8>, CryptoError> {
        let mut out = vec![0u8; n_bytes];
        for chunk in out.chunks_mut(MAX_REQUEST_BYTES) {
            self.fill(chunk, &[])?;
        }
        Ok(out)
    }
}

/// HKDF-SHA256 (extract then expand) into `okm`.
pub fn hkdf_sha256(salt: &[u8], ikm: &[u8], info: &[u8], okm: &mut [u8]) {
    assert!(okm.len() <= 255 * 32, "hkdf output too long");
    let prk = hmac_parts(salt, &[ikm]);
    let mut t: Vec<u8> = Vec::new();
    for (i, chunk) in okm.chunks_mut(32).enumerate() {
        let counter = [(i + 1) as u8];
        let block = hmac_parts(&prk, &[&t, info, &counter]);
        chunk.copy_from_slice(&block[..chunk.len()]);
        t = block.to_vec();
    }
}

/// Derives a 32-byte seed from a shared secret, bound to `context`.
pub fn kdf(shared: &[u8], context: &[u8]) -> Result<[u8; 32], CryptoError> {
    if context.is_empty() {
        return Err(CryptoError::EmptyContext);
    }
    let mut seed = [0u8; 32];
    hkdf_sha256(KDF_SALT, shared, context, &mut seed);
    Ok(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    #[test]
    fn cavp_hmac_sha256_no_reseed_count0() {
        // HMAC_DRBG.rsp [SHA-256], no prediction resistance, COUNT = 0.
        let mut drbg = HmacDrbg::new(
            &hex("ca851911349384bffe89de1cbdc46e6831e44d34a4fb935ee285dd14b71a7488"),
            &hex("659ba96c601dc69fc902940805ec0ca8"),
            &[],
        );
        drbg.generate(128).unwrap();
        let out = drbg.generate(128).unwrap();
        assert_eq!(
            out,
            hex(concat!(
                "e528e9abf2dece54d47c7e75e5fe302149f817ea9fb4bee6f4199697d04d5b89",
                "d54fbb978a15b5c443c9ec21036d2460b6f73ebad0dc2aba6e624abf07745bc1",
                "07694bb7547bb0995f70de25d6b29e2d3011bb19d27676c07162c8b5ccde0668",
                "961df86803482cb37ed6d5c0bb8d50cf1f50d476aa0458bdaba806f48be9dcb8"
            ))
        );
        assert_eq!(drbg.reseed_counter(), 3);
    }

    #[test]
    fn personalized_instance_matches_reference() {
        // Computed with an independent Python HMAC_DRBG built on hashlib/hmac.
        let mut drbg = HmacDrbg::new(&[0x42; 32], &[0; 8], b"xfl");
        assert_eq!(
            drbg.generate(64).unwrap(),
            hex(concat!(
                "9afaddb9699e5292c6c6977419b0fae07375f6a063a40503dc979ac8cd795395",
                "c5ea0f9a44e07eda1230238326a33311de2fb868027f32980a34b09c6af9c8dc"
            ))
        );
    }

    #[test]
    fn determinism_and_divergence() {
        let mut a = HmacDrbg::new(&[7; 32], b"n", b"p");
        let mut b = HmacDrbg::new(&[7; 32], b"n", b"p");
        let mut c = HmacDrbg::new(&[8; 32], b"n", b"p");
        for i in 1..=10 {
            let x = a.generate(i * 17).unwrap();
            assert_eq!(x, b.generate(i * 17).unwrap());
            assert_ne!(x, c.generate(i * 17).unwrap());
        }
    }

    #[test]
    fn request_limit_and_reseed() {
        let mut d = HmacDrbg::new(&[1; 32], &[], &[]);
        assert_eq!(d.generate(MAX_REQUEST_BYTES + 1).unwrap_err(), CryptoError::RequestTooLarge(MAX_REQUEST_BYTES + 1));
        assert_eq!(d.generate(MAX_REQUEST_BYTES).unwrap().len(), MAX_REQUEST_BYTES);
        assert_eq!(d.generate_stream(3 * MAX_REQUEST_BYTES + 5).unwrap().len(), 3 * MAX_REQUEST_BYTES + 5);
        d.reseed_counter = RESEED_INTERVAL + 1;
        assert_eq!(d.generate(1).unwrap_err(), CryptoError::ReseedRequired);
        d.reseed(&[2; 32], b"");
        assert!(d.generate(1).is_ok());
    }

    #[test]
    fn hkdf_rfc5869_case1() {
        let mut okm = [0u8; 42];
        hkdf_sha256(&hex("000102030405060708090a0b0c"), &[0x0b; 22], &hex("f0f1f2f3f4f5f6f7f8f9"), &mut okm);
        assert_eq!(
            okm.to_vec(),
            hex("3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865")
        );
    }

    #[test]
    fn kdf_properties() {
        let shared = [0x11u8; 32];
        let a = kdf(&shared, b"session-1").unwrap();
        assert_eq!(a, kdf(&shared, b"session-1").unwrap());
        assert_ne!(a, kdf(&shared, b"session-2").unwrap());
        assert_eq!(kdf(&shared, b"").unwrap_err(), CryptoError::EmptyContext);
        // Reference value from Python's hmac/hashlib HKDF.
        assert_eq!(a.to_vec(), hex("216cbdf15fdf46282d74677b697c85c11c5019191a71af055e930436bd0c77ad"));
    }
}
