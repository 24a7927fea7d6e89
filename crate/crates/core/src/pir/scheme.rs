use std::collections::HashMap;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use super::primes::{random_between, safe_prime, semi_safe_prime, PrimePair};
use super::{PirError, PrimeTable};

/// Random squares tried before the generator search gives up.
pub const GENERATOR_SEARCH_BUDGET: usize = 10_000;

/// What the client sends: the composite modulus, a generator of the group of
/// quadratic residues, and the number of shared primes in use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirQuery {
    pub modulus: BigUint,
    pub generator: BigUint,
    pub prime_end_index: u32,
}

/// What the client keeps: the factorization of the group order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirSecret {
    /// 1-based block index being retrieved.
    pub target_index: usize,
    /// `q = q0 * q1`; the group order is `q * pi_i`.
    pub cofactor: BigUint,
    /// `h = g^q`, of order exactly `pi_i`.
    pub subgroup_generator: BigUint,
    pub q0: BigUint,
    pub q1: BigUint,
    pub modulus: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirResponse {
    pub value: BigUint,
}

/// Builds queries for one client session.
///
/// Safe-prime generation dominates query cost and does not depend on the
/// target index, so a session may opt into reusing its safe prime.
#[derive(Clone, Debug)]
pub struct QueryGenerator {
    modulus_bits: u32,
    reuse_safe_prime: bool,
    cached_safe_prime: Option<PrimePair>,
}

impl QueryGenerator {
    pub fn new(modulus_bits: u32) -> Self {
        QueryGenerator {
            modulus_bits,
            reuse_safe_prime: false,
            cached_safe_prime: None,
        }
    }

    pub fn reuse_safe_prime(mut self, reuse: bool) -> Self {
        self.reuse_safe_prime = reuse;
        if !reuse {
            self.cached_safe_prime = None;
        }
        self
    }

    pub fn modulus_bits(&self) -> u32 {
        self.modulus_bits
    }

    fn safe_prime<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PrimePair, PirError> {
        let half = u64::from(self.modulus_bits / 2);
        if !self.reuse_safe_prime {
            return safe_prime(half, rng);
        }
        if let Some(pair) = &self.cached_safe_prime {
            return Ok(pair.clone());
        }
        let pair = safe_prime(half, rng)?;
        self.cached_safe_prime = Some(pair.clone());
        Ok(pair)
    }

    /// Instantiates a group whose order is divisible by `pi_{target_index}`.
    pub fn generate<R: Rng + ?Sized>(
        &mut self,
        target_index: usize,
        table: &PrimeTable,
        rng: &mut R,
    ) -> Result<(PirQuery, PirSecret), PirError> {
        if table.modulus_bits() != self.modulus_bits {
            return Err(PirError::Parameter(format!(
                "table built for a {}-bit modulus, generator for {}",
                table.modulus_bits(),
                self.modulus_bits
            )));
        }
        let power = table.power(target_index)?.clone();
        let prime = BigUint::from(table.prime(target_index)?);
        let half = u64::from(self.modulus_bits / 2);

        let safe = self.safe_prime(rng)?;
        let semi = loop {
            let candidate = semi_safe_prime(half, &power, rng)?;
            if candidate.small != safe.small && candidate.big != safe.big {
                break candidate;
            }
        };
        let modulus = &semi.big * &safe.big;
        let order = &semi.small * &safe.small * &power;
        let cofactor = &semi.small * &safe.small;

        let checks = [&order / &prime, &order / &semi.small, &order / &safe.small];
        let low = BigUint::from(2u32);
        let high = &modulus - 2u32;
        let mut generator = None;
        for _ in 0..GENERATOR_SEARCH_BUDGET {
            let x = random_between(rng, &low, &high);
            if !x.gcd(&modulus).is_one() {
                continue;
            }
            let candidate = (&x * &x) % &modulus;
            if candidate.is_one() {
                continue;
            }
            if checks.iter().all(|e| !candidate.modpow(e, &modulus).is_one()) {
                generator = Some(candidate);
                break;
            }
        }
        let generator = generator.ok_or_else(|| {
            PirError::GenerationTimeout(format!(
                "no generator found in {GENERATOR_SEARCH_BUDGET} attempts"
            ))
        })?;
        let subgroup_generator = generator.modpow(&cofactor, &modulus);
        let query = PirQuery {
            modulus: modulus.clone(),
            generator,
            prime_end_index: table.len() as u32,
        };
        let secret = PirSecret {
            target_index,
            cofactor,
            subgroup_generator,
            q0: semi.small,
            q1: safe.small,
            modulus,
        };
        Ok((query, secret))
    }
}

/// One-shot query generation with a fresh safe prime.
pub fn generate_query<R: Rng + ?Sized>(
    target_index: usize,
    table: &PrimeTable,
    modulus_bits: u32,
    rng: &mut R,
) -> Result<(PirQuery, PirSecret), PirError> {
    QueryGenerator::new(modulus_bits).generate(target_index, table, rng)
}

/// The least non-negative `e` with `e = blocks[i] (mod pi_{i+1})` for every
/// block, by Garner's mixed-radix recurrence.
pub fn encode_database(blocks: &[BigUint], table: &PrimeTable) -> Result<BigUint, PirError> {
    if blocks.len() > table.len() {
        return Err(PirError::Parameter(format!(
            "{} blocks but only {} shared primes",
            blocks.len(),
            table.len()
        )));
    }
    let bound = BigUint::one() << table.block_bits();
    if let Some(index) = blocks.iter().position(|b| b >= &bound) {
        return Err(PirError::BlockOverflow {
            index: index + 1,
            bits: table.block_bits(),
        });
    }
    let mut e = BigUint::zero();
    let mut product = BigUint::one();
    for ((block, power), inverse) in blocks.iter().zip(table.powers()).zip(table.crt_inverses()) {
        // e + product * x = block (mod power)
        let current = &e % power;
        let diff = if block >= &current {
            block - &current
        } else {
            power - (&current - block)
        };
        let x = (diff * inverse) % power;
        e += &product * x;
        product *= power;
    }
    Ok(e)
}

/// `g^e mod mu`. Reads nothing but the exponent and the query.
pub fn respond(e: &BigUint, query: &PirQuery) -> PirResponse {
    PirResponse {
        value: query.generator.modpow(e, &query.modulus),
    }
}

/// Recovers `e mod pi_i` from `g^e` by Pohlig-Hellman in the subgroup of
/// order `pi_i = p^c`, one base-`p` digit at a time.
pub fn recover(
    response: &PirResponse,
    secret: &PirSecret,
    table: &PrimeTable,
) -> Result<BigUint, PirError> {
    let index = secret.target_index;
    let p = table.prime(index)?;
    let c = table.exponent(index)?;
    let modulus = &secret.modulus;
    let h = &secret.subgroup_generator;
    if response.value.is_zero() || &response.value >= modulus {
        return Err(PirError::Integrity("response is not a group element".into()));
    }

    let h_e = response.value.modpow(&secret.cofactor, modulus);
    let p_big = BigUint::from(p);
    let mut p_powers = Vec::with_capacity(c as usize + 1);
    let mut acc = BigUint::one();
    for _ in 0..=c {
        p_powers.push(acc.clone());
        acc *= &p_big;
    }
    // gamma generates the order-p subgroup.
    let gamma = h.modpow(&p_powers[c as usize - 1], modulus);
    if gamma.is_one() {
        return Err(PirError::Integrity("subgroup generator has the wrong order".into()));
    }
    let mut digits = HashMap::with_capacity(p as usize);
    let mut x = BigUint::one();
    for j in 0..p {
        digits.insert(x.clone(), j);
        x = (&x * &gamma) % modulus;
    }
    if !x.is_one() {
        return Err(PirError::Integrity("subgroup generator has the wrong order".into()));
    }

    let log = subgroup_log(&h_e, h, c as usize, &p_powers, &digits, modulus).ok_or_else(|| {
        PirError::Integrity(format!("no discrete log for block {index}"))
    })?;
    if h.modpow(&log, modulus) != h_e {
        return Err(PirError::Integrity(
            "response is outside the subgroup generated by h".into(),
        ));
    }
    Ok(log)
}

/// Discrete log of `y` to base `g`, where `g` has order `p^c`, splitting the
/// digits in halves. Every leaf base is the same order-`p` element, whose
/// powers are indexed by `digits`.
fn subgroup_log(
    y: &BigUint,
    g: &BigUint,
    c: usize,
    p_powers: &[BigUint],
    digits: &HashMap<BigUint, u64>,
    modulus: &BigUint,
) -> Option<BigUint> {
    if c == 1 {
        return digits.get(y).map(|&d| BigUint::from(d));
    }
    let low = c / 2;
    let high = c - low;
    let low_log = subgroup_log(
        &y.modpow(&p_powers[high], modulus),
        &g.modpow(&p_powers[high], modulus),
        low,
        p_powers,
        digits,
        modulus,
    )?;
    let order = &p_powers[c];
    let rest = (y * g.modpow(&((order - &low_log) % order), modulus)) % modulus;
    let high_log = subgroup_log(
        &rest,
        &g.modpow(&p_powers[low], modulus),
        high,
        p_powers,
        digits,
        modulus,
    )?;
    Some(low_log + high_log * &p_powers[low])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small(v: &[u32]) -> Vec<BigUint> {
        v.iter().map(|&x| BigUint::from(x)).collect()
    }

    /// Brute-force scan for the least non-negative simultaneous solution.
    fn crt_oracle(blocks: &[u64], powers: &[u64]) -> u64 {
        let product: u64 = powers.iter().product();
        (0..product)
            .find(|e| blocks.iter().zip(powers).all(|(b, p)| e % p == *b))
            .expect("CRT always has a solution")
    }

    #[test]
    fn encode_examples() {
        let table = PrimeTable::build(2, 4, 1024).unwrap();
        assert_eq!(crt_oracle(&[9, 13], &[27, 25]), 63);
        assert_eq!(encode_database(&small(&[9, 13]), &table).unwrap(), BigUint::from(63u32));
        assert_eq!(encode_database(&small(&[11]), &table).unwrap(), BigUint::from(11u32));
        assert_eq!(encode_database(&small(&[0, 0]), &table).unwrap(), BigUint::zero());
        assert_eq!(
            encode_database(&small(&[16, 1]), &table),
            Err(PirError::BlockOverflow { index: 1, bits: 4 })
        );
        assert!(encode_database(&small(&[1, 2, 3]), &table).is_err());
    }

    #[test]
    fn encode_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for count in 1..=4usize {
            for l in [1u64, 2, 3, 4] {
                let table = PrimeTable::build(count, l, 1024).unwrap();
                let powers: Vec<u64> = table
                    .powers()
                    .iter()
                    .map(|p| p.try_into().unwrap())
                    .collect();
                if powers.iter().product::<u64>() >= 1 << 24 {
                    continue;
                }
                for _ in 0..10 {
                    let blocks: Vec<u64> = (0..count).map(|_| rng.random_range(0..1u64 << l)).collect();
                    let expected = crt_oracle(&blocks, &powers);
                    let big: Vec<BigUint> = blocks.iter().map(|&b| BigUint::from(b)).collect();
                    assert_eq!(encode_database(&big, &table).unwrap(), BigUint::from(expected));
                }
            }
        }
    }

    #[test]
    fn query_group_has_expected_orders() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let table = PrimeTable::build(8, 16, 1024).unwrap();
        for index in [1usize, 5, 8] {
            let (query, secret) = generate_query(index, &table, 1024, &mut rng).unwrap();
            let m = &query.modulus;
            let p = BigUint::from(table.prime(index).unwrap());
            let power = table.power(index).unwrap();
            let order = &secret.q0 * &secret.q1 * power;
            let g = &query.generator;
            assert!(g > &BigUint::one() && g < m);
            assert!(g.gcd(m).is_one());
            assert!(g.modpow(&order, m).is_one());
            for f in [&p, &secret.q0, &secret.q1] {
                assert!(!g.modpow(&(&order / f), m).is_one());
            }
            let h = &secret.subgroup_generator;
            assert!(h.modpow(power, m).is_one());
            assert!(!h.modpow(&(power / &p), m).is_one());
            assert_eq!(query.prime_end_index, 8);
        }
    }

    #[test]
    fn respond_identities() {
        let query = PirQuery {
            modulus: BigUint::from(1_000_003u32),
            generator: BigUint::from(5u32),
            prime_end_index: 1,
        };
        assert_eq!(respond(&BigUint::zero(), &query).value, BigUint::one());
        assert_eq!(respond(&BigUint::one(), &query).value, BigUint::from(5u32));
    }

    #[test]
    fn round_trip_small_table() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let table = PrimeTable::build(2, 4, 1024).unwrap();
        let e = encode_database(&small(&[9, 13]), &table).unwrap();
        for (index, expected) in [(1usize, 9u32), (2, 13)] {
            let (query, secret) = generate_query(index, &table, 1024, &mut rng).unwrap();
            let got = recover(&respond(&e, &query), &secret, &table).unwrap();
            assert_eq!(got, BigUint::from(expected));
        }
        let zero = PrimeTable::build(1, 8, 1024).unwrap();
        let e = encode_database(&small(&[0]), &zero).unwrap();
        let (query, secret) = generate_query(1, &zero, 1024, &mut rng).unwrap();
        assert_eq!(recover(&respond(&e, &query), &secret, &zero).unwrap(), BigUint::zero());
    }

    #[test]
    fn corrupted_response_is_detected() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let table = PrimeTable::build(4, 64, 1024).unwrap();
        let e = encode_database(&small(&[1, 2, 3, 4]), &table).unwrap();
        let (query, secret) = generate_query(2, &table, 1024, &mut rng).unwrap();
        let mut response = respond(&e, &query);
        // -1 has order 2, so it can never land in the odd-order subgroup.
        response.value = (&response.value * (&query.modulus - 1u32)) % &query.modulus;
        assert!(matches!(recover(&response, &secret, &table), Err(PirError::Integrity(_))));
        let zero = PirResponse { value: BigUint::zero() };
        assert!(matches!(recover(&zero, &secret, &table), Err(PirError::Integrity(_))));
    }

    #[test]
    fn reused_safe_prime_is_shared_across_queries() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let table = PrimeTable::build(4, 32, 1024).unwrap();
        let mut session = QueryGenerator::new(1024).reuse_safe_prime(true);
        let (_, a) = session.generate(1, &table, &mut rng).unwrap();
        let (_, b) = session.generate(3, &table, &mut rng).unwrap();
        assert_eq!(a.q1, b.q1);
        assert_ne!(a.q0, b.q0);
        let mut fresh = QueryGenerator::new(1024);
        let (_, c) = fresh.generate(1, &table, &mut rng).unwrap();
        let (_, d) = fresh.generate(1, &table, &mut rng).unwrap();
        assert_ne!(c.q1, d.q1);
        assert!(QueryGenerator::new(2048).generate(1, &table, &mut rng).is_err());
    }
}
