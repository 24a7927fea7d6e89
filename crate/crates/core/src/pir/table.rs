use num_bigint::BigUint;
use num_traits::One;

use super::primes::consecutive_primes;
use super::PirError;

/// The shared table starts at 3: every prime power must be odd so that
/// `2 * q0 * pi + 1` can be prime.
pub const FIRST_PRIME: u64 = 3;

pub const SUPPORTED_MODULUS_BITS: [u32; 3] = [1024, 2048, 3072];

/// Consecutive primes with the prime powers that hold one `l`-bit block each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeTable {
    block_bits: u64,
    modulus_bits: u32,
    primes: Vec<u64>,
    exponents: Vec<u32>,
    powers: Vec<BigUint>,
    /// `(pi_1 * ... * pi_{i-1})^-1 mod pi_i`, the Garner coefficients.
    crt_inverses: Vec<BigUint>,
}

impl PrimeTable {
    /// Builds the table for `count` blocks of `block_bits` bits under a
    /// `modulus_bits` composite.
    ///
    /// Blocks may be at most a quarter of the modulus wide; the largest
    /// prime power is then below `p_i * 2^(modulus_bits / 4)`.
    pub fn build(count: usize, block_bits: u64, modulus_bits: u32) -> Result<Self, PirError> {
        if count == 0 || block_bits == 0 {
            return Err(PirError::Parameter(
                "prime table needs at least one block of at least one bit".into(),
            ));
        }
        if !SUPPORTED_MODULUS_BITS.contains(&modulus_bits) {
            return Err(PirError::Parameter(format!(
                "modulus of {modulus_bits} bits is not one of {SUPPORTED_MODULUS_BITS:?}"
            )));
        }
        if u32::try_from(count).is_err() {
            return Err(PirError::Parameter(format!("{count} blocks exceed the index width")));
        }
        let quarter = u64::from(modulus_bits / 4);
        if block_bits > quarter {
            return Err(PirError::Capacity(format!(
                "{block_bits}-bit blocks exceed the {quarter}-bit limit of a {modulus_bits}-bit modulus"
            )));
        }
        let primes = consecutive_primes(FIRST_PRIME, count);
        let block_bound = BigUint::one() << block_bits;
        let mut exponents = Vec::with_capacity(count);
        let mut powers = Vec::with_capacity(count);
        for &p in &primes {
            // c = ceil(l / log2 p) is the least c with p^c >= 2^l.
            let base = BigUint::from(p);
            let mut c = 1u32;
            let mut power = base.clone();
            while power < block_bound {
                power *= &base;
                c += 1;
            }
            exponents.push(c);
            powers.push(power);
        }
        let mut crt_inverses = Vec::with_capacity(count);
        let mut product = BigUint::one();
        for power in &powers {
            let reduced = &product % power;
            let inverse = reduced
                .modinv(power)
                .expect("powers of distinct primes are coprime");
            crt_inverses.push(inverse);
            product *= power;
        }
        Ok(PrimeTable {
            block_bits,
            modulus_bits,
            primes,
            exponents,
            powers,
            crt_inverses,
        })
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn block_bits(&self) -> u64 {
        self.block_bits
    }

    pub fn modulus_bits(&self) -> u32 {
        self.modulus_bits
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn powers(&self) -> &[BigUint] {
        &self.powers
    }

    /// Prime `p_i` for a 1-based index.
    pub fn prime(&self, index: usize) -> Result<u64, PirError> {
        self.check_index(index)?;
        Ok(self.primes[index - 1])
    }

    /// Prime power `pi_i` for a 1-based index.
    pub fn power(&self, index: usize) -> Result<&BigUint, PirError> {
        self.check_index(index)?;
        Ok(&self.powers[index - 1])
    }

    pub fn exponent(&self, index: usize) -> Result<u32, PirError> {
        self.check_index(index)?;
        Ok(self.exponents[index - 1])
    }

    pub(crate) fn crt_inverses(&self) -> &[BigUint] {
        &self.crt_inverses
    }

    fn check_index(&self, index: usize) -> Result<(), PirError> {
        if index == 0 || index > self.len() {
            return Err(PirError::Parameter(format!(
                "index {index} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_entry_example() {
        let table = PrimeTable::build(2, 4, 1024).unwrap();
        assert_eq!(table.primes(), &[3, 5]);
        assert_eq!(table.exponents(), &[3, 2]);
        assert_eq!(table.powers(), &[BigUint::from(27u32), BigUint::from(25u32)]);
    }

    #[test]
    fn minimal_table() {
        let table = PrimeTable::build(1, 1, 1024).unwrap();
        assert_eq!(table.primes(), &[3]);
        assert_eq!(table.exponents(), &[1]);
        assert_eq!(table.power(1).unwrap(), &BigUint::from(3u32));
    }

    #[test]
    fn exponent_matches_float_formula() {
        for l in [1u64, 4, 7, 64, 100, 512] {
            let table = PrimeTable::build(64, l, 2048).unwrap();
            for (&p, &c) in table.primes().iter().zip(table.exponents()) {
                let expected = (l as f64 / (p as f64).log2()).ceil() as u32;
                assert_eq!(c, expected, "p={p} l={l}");
                assert!(BigUint::from(p).pow(c) >= BigUint::one() << l);
                assert!(BigUint::from(p).pow(c - 1) < BigUint::one() << l);
            }
        }
    }

    #[test]
    fn invariants_hold_for_wide_blocks() {
        let table = PrimeTable::build(128, 512, 2048).unwrap();
        let bound = BigUint::one() << 512u32;
        for (i, power) in table.powers().iter().enumerate() {
            assert!(power >= &bound);
            assert!(power < &(BigUint::from(table.primes()[i]) << 512u32));
        }
        assert!(table.primes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(table, PrimeTable::build(128, 512, 2048).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(PrimeTable::build(4, 513, 2048), Err(PirError::Capacity(_))));
        assert!(matches!(PrimeTable::build(4, 257, 1024), Err(PirError::Capacity(_))));
        assert!(PrimeTable::build(4, 768, 3072).is_ok());
        assert!(matches!(PrimeTable::build(0, 8, 2048), Err(PirError::Parameter(_))));
        assert!(matches!(PrimeTable::build(2, 8, 4096), Err(PirError::Parameter(_))));
        let table = PrimeTable::build(2, 8, 2048).unwrap();
        assert!(table.power(0).is_err());
        assert!(table.power(3).is_err());
    }
}
