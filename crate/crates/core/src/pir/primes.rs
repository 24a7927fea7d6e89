//! Primality testing and the prime searches behind group instantiation.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use super::PirError;

/// Miller-Rabin rounds; each round errs with probability at most 1/4, so 40
/// rounds bound the error by 2^-80.
pub const MR_ROUNDS: usize = 40;

/// Deterministic trial division covers every prime below this bound.
pub const TRIAL_DIVISION_BOUND: u64 = 1000;

/// Sieve primes used to discard candidates before any modular exponentiation.
const SIEVE_BOUND: u64 = 1 << 13;

/// Candidate positions examined before a prime search gives up.
pub const PRIME_SEARCH_BUDGET: usize = 1 << 22;

fn sieve_below(bound: u64) -> Vec<u64> {
    let n = bound as usize;
    let mut composite = vec![false; n];
    let mut out = Vec::new();
    for i in 2..n {
        if !composite[i] {
            out.push(i as u64);
            let mut j = i * i;
            while j < n {
                composite[j] = true;
                j += i;
            }
        }
    }
    out
}

fn small_primes() -> &'static [u64] {
    static PRIMES: OnceLock<Vec<u64>> = OnceLock::new();
    PRIMES.get_or_init(|| sieve_below(SIEVE_BOUND))
}

fn trial_primes() -> &'static [u64] {
    let all = small_primes();
    let end = all.partition_point(|&p| p < TRIAL_DIVISION_BOUND);
    &all[..end]
}

/// The `count` consecutive primes beginning with the smallest prime `>= first`.
pub fn consecutive_primes(first: u64, count: usize) -> Vec<u64> {
    let mut bound = (first + 64).max(128);
    loop {
        let primes: Vec<u64> = sieve_below(bound)
            .into_iter()
            .filter(|&p| p >= first)
            .take(count)
            .collect();
        if primes.len() == count {
            return primes;
        }
        bound *= 2;
    }
}

/// Uniform integer with exactly `bits` bits (top bit set).
pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    assert!(bits >= 1);
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let excess = bytes as u64 * 8 - bits;
    buf[0] &= 0xff >> excess;
    buf[0] |= 0x80 >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[0, bound)`, by rejection.
pub fn random_below<R: Rng + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero());
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = bytes as u64 * 8 - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xff >> excess;
        let v = BigUint::from_bytes_be(&buf);
        if &v < bound {
            return v;
        }
    }
}

/// Uniform integer in `[low, high]`.
pub fn random_between<R: Rng + ?Sized>(rng: &mut R, low: &BigUint, high: &BigUint) -> BigUint {
    assert!(low <= high);
    low + random_below(rng, &(high - low + 1u32))
}

fn small_factor(n: &BigUint) -> Option<u64> {
    trial_primes()
        .iter()
        .copied()
        .find(|&p| (n % p).is_zero() && *n != BigUint::from(p))
}

fn miller_rabin_round(n: &BigUint, n_minus_1: &BigUint, d: &BigUint, r: u64, base: &BigUint) -> bool {
    let mut x = base.modpow(d, n);
    if x.is_one() || &x == n_minus_1 {
        return true;
    }
    for _ in 1..r {
        x = (&x * &x) % n;
        if &x == n_minus_1 {
            return true;
        }
        if x.is_one() {
            return false;
        }
    }
    false
}

/// Trial division below 1000, then a base-2 round and `rounds - 1` rounds
/// with uniformly random bases.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if n < &BigUint::from(2u32) {
        return false;
    }
    if let Some(small) = n.to_u64().filter(|&v| v < TRIAL_DIVISION_BOUND) {
        return trial_primes().binary_search(&small).is_ok();
    }
    if small_factor(n).is_some() {
        return false;
    }
    if n < &BigUint::from(TRIAL_DIVISION_BOUND * TRIAL_DIVISION_BOUND) {
        return true;
    }
    let n_minus_1 = n - 1u32;
    let r = n_minus_1.trailing_zeros().expect("n > 1");
    let d = &n_minus_1 >> r;
    let two = BigUint::from(2u32);
    if !miller_rabin_round(n, &n_minus_1, &d, r, &two) {
        return false;
    }
    let span = n - 3u32;
    for _ in 1..rounds {
        let base = random_below(rng, &span) + 2u32;
        if !miller_rabin_round(n, &n_minus_1, &d, r, &base) {
            return false;
        }
    }
    true
}

fn fermat_base2(n: &BigUint) -> bool {
    BigUint::from(2u32).modpow(&(n - 1u32), n).is_one()
}

/// A prime pair `(big, small)` with `big = multiplier * small + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimePair {
    pub big: BigUint,
    pub small: BigUint,
}

/// Searches upward from a random odd `small` in `[low, high]` for a prime
/// `small` with `multiplier * small + 1` also prime, sieving both sides.
fn paired_search<R: Rng + ?Sized>(
    low: &BigUint,
    high: &BigUint,
    multiplier: &BigUint,
    rng: &mut R,
) -> Result<PrimePair, PirError> {
    let primes = small_primes();
    let mult_res: Vec<u64> = primes.iter().map(|&p| (multiplier % p).to_u64().unwrap()).collect();
    let mut examined = 0usize;
    while examined < PRIME_SEARCH_BUDGET {
        let mut base = random_between(rng, low, high);
        if base.is_even() {
            base += 1u32;
        }
        let residues: Vec<u64> = primes.iter().map(|&p| (&base % p).to_u64().unwrap()).collect();
        // Restart from a fresh random point after this many positions so one
        // unlucky start cannot walk past `high`.
        let window = 1u64 << 16;
        let mut delta = 0u64;
        while delta < window && examined < PRIME_SEARCH_BUDGET {
            examined += 1;
            let survives = primes.iter().zip(&residues).zip(&mult_res).all(|((&p, &r), &mr)| {
                let small = (r + delta) % p;
                let big = (mr * small + 1) % p;
                small != 0 && big != 0
            });
            if survives {
                let small = &base + delta;
                if &small > high {
                    break;
                }
                if fermat_base2(&small) {
                    let big = multiplier * &small + 1u32;
                    if fermat_base2(&big)
                        && is_probable_prime(&small, MR_ROUNDS, rng)
                        && is_probable_prime(&big, MR_ROUNDS, rng)
                    {
                        return Ok(PrimePair { big, small });
                    }
                }
            }
            delta += 2;
        }
    }
    Err(PirError::GenerationTimeout(format!(
        "no prime pair found within {PRIME_SEARCH_BUDGET} candidates"
    )))
}

/// A safe prime `Q = 2q + 1` of exactly `bits` bits.
pub fn safe_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<PrimePair, PirError> {
    if bits < 16 {
        return Err(PirError::Parameter(format!("safe prime of {bits} bits is too small")));
    }
    // q in [2^(bits-2), (2^bits - 2) / 2] keeps 2q + 1 at exactly `bits` bits.
    let low = BigUint::one() << (bits - 2);
    let high = ((BigUint::one() << bits) - 2u32) >> 1u32;
    paired_search(&low, &high, &BigUint::from(2u32), rng)
}

/// A "semi-safe" prime `Q = 2 * q * power + 1` of exactly `bits` bits with
/// prime `q`, so that `power` divides `Q - 1`.
pub fn semi_safe_prime<R: Rng + ?Sized>(
    bits: u64,
    power: &BigUint,
    rng: &mut R,
) -> Result<PrimePair, PirError> {
    let multiplier = power * 2u32;
    let top = BigUint::one() << bits;
    let bottom = BigUint::one() << (bits - 1);
    // multiplier * q + 1 in [2^(bits-1), 2^bits - 1]
    let low = Integer::div_ceil(&(&bottom - 1u32), &multiplier);
    let high = (&top - 2u32) / &multiplier;
    if high <= low || (&high - &low).bits() < 32 {
        return Err(PirError::Capacity(format!(
            "prime power of {} bits leaves no room for a cofactor in a {bits}-bit prime",
            power.bits()
        )));
    }
    paired_search(&low, &high, &multiplier, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn naive_is_prime(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
    }

    #[test]
    fn agrees_with_naive_primality() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for n in 0..5000u64 {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), MR_ROUNDS, &mut rng),
                naive_is_prime(n),
                "n={n}"
            );
        }
        for n in (1_000_000_007u64..1_000_001_000).step_by(2) {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), MR_ROUNDS, &mut rng),
                naive_is_prime(n),
                "n={n}"
            );
        }
    }

    #[test]
    fn rejects_carmichael_numbers() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for c in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265, 321197185] {
            assert!(!is_probable_prime(&BigUint::from(c), MR_ROUNDS, &mut rng));
        }
        // 2^127 - 1 is prime, 2^128 + 1 is not.
        let m127 = (BigUint::one() << 127u32) - 1u32;
        assert!(is_probable_prime(&m127, MR_ROUNDS, &mut rng));
        let f7 = (BigUint::one() << 128u32) + 1u32;
        assert!(!is_probable_prime(&f7, MR_ROUNDS, &mut rng));
    }

    #[test]
    fn consecutive_from_three() {
        assert_eq!(consecutive_primes(3, 8), vec![3, 5, 7, 11, 13, 17, 19, 23]);
        assert_eq!(consecutive_primes(3, 1000).len(), 1000);
        assert_eq!(consecutive_primes(3, 1000)[999], 7927);
        assert_eq!(consecutive_primes(14, 2), vec![17, 19]);
    }

    #[test]
    fn random_bits_has_exact_width() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for bits in [1u64, 7, 8, 9, 63, 64, 65, 512] {
            for _ in 0..20 {
                assert_eq!(random_bits(&mut rng, bits).bits(), bits);
            }
        }
    }

    #[test]
    fn safe_prime_structure() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let pair = safe_prime(256, &mut rng).unwrap();
        assert_eq!(pair.big.bits(), 256);
        assert_eq!(pair.big, &pair.small * 2u32 + 1u32);
        assert!(is_probable_prime(&pair.small, MR_ROUNDS, &mut rng));
        assert!(is_probable_prime(&pair.big, MR_ROUNDS, &mut rng));
    }

    #[test]
    fn semi_safe_prime_embeds_power() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let power = BigUint::from(3u32).pow(81);
        let pair = semi_safe_prime(512, &power, &mut rng).unwrap();
        assert_eq!(pair.big.bits(), 512);
        assert_eq!(pair.big, &pair.small * &power * 2u32 + 1u32);
        assert!(is_probable_prime(&pair.big, MR_ROUNDS, &mut rng));
        assert!(is_probable_prime(&pair.small, MR_ROUNDS, &mut rng));
        assert!(semi_safe_prime(64, &(BigUint::one() << 62u32), &mut rng).is_err());
    }
}
