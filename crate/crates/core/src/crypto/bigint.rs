//! Random big integers and probabilistic primality.

use alloc::vec;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand_core::RngCore;

const SMALL_PRIMES: [u32; 60] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283,
];

/// Uniform integer in `[0, 2^bits)`.
pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    if bits == 0 {
        return BigUint::zero();
    }
    let n_bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; n_bytes];
    rng.fill_bytes(&mut buf);
    let excess = (n_bytes as u64) * 8 - bits;
    buf[0] &= 0xffu8 >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[0, bound)` by rejection sampling.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "empty sampling range");
    let bits = bound.bits();
    loop {
        let candidate = random_bits(rng, bits);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// Uniform unit of `Z_n^*` (nonzero, coprime to `n`).
pub fn random_unit<R: RngCore + ?Sized>(rng: &mut R, n: &BigUint) -> BigUint {
    loop {
        let r = random_below(rng, n);
        if !r.is_zero() && r.gcd(n).is_one() {
            return r;
        }
    }
}

/// Miller-Rabin with `rounds` random bases after small-prime trial division.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if let Some(small) = n.to_u32() {
        if small == 2 || SMALL_PRIMES.contains(&small) {
            return true;
        }
    }
    if n.is_even() {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        if (n % p).is_zero() {
            return false;
        }
    }

    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let span = n - 3u32;

    'witness: for _ in 0..rounds {
        let a = random_below(rng, &span) + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
            if x.is_one() {
                return false;
            }
        }
        return false;
    }
    true
}

/// Random prime of exactly `bits` bits with the two top bits set and
/// `p = 3 (mod 4)`, so a product of two such primes has exactly `2*bits` bits.
pub fn random_blum_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 16, "prime size too small");
    let top = BigUint::from(3u32) << (bits - 2);
    loop {
        let mut candidate = random_bits(rng, bits) | &top;
        candidate |= BigUint::from(3u32);
        if is_probable_prime(&candidate, 40, rng) {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn primality_on_known_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for p in [2u32, 3, 5, 283, 7919, 104_729, 2_147_483_647] {
            assert!(is_probable_prime(&BigUint::from(p), 20, &mut rng), "{p}");
        }
        // Carmichael numbers and squares must be rejected.
        for c in [1u32, 4, 561, 1105, 41041, 825_265, 7919 * 7919] {
            assert!(!is_probable_prime(&BigUint::from(c), 20, &mut rng), "{c}");
        }
        let m127 = (BigUint::one() << 127u32) - 1u32;
        assert!(is_probable_prime(&m127, 20, &mut rng));
        let m128 = (BigUint::one() << 128u32) - 1u32;
        assert!(!is_probable_prime(&m128, 20, &mut rng));
    }

    #[test]
    fn blum_prime_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = random_blum_prime(128, &mut rng);
        assert_eq!(p.bits(), 128);
        assert_eq!((&p % 4u32).to_u32(), Some(3));
        assert!((&p >> 126u32) == BigUint::from(3u32));
    }

    #[test]
    fn random_below_stays_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let bound = BigUint::from(1000u32);
        for _ in 0..500 {
            assert!(random_below(&mut rng, &bound) < bound);
        }
        assert!(random_bits(&mut rng, 13) < (BigUint::one() << 13u32));
    }
}
