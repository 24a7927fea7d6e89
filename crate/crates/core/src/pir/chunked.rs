use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;

use super::scheme::{encode_database, recover, respond, PirQuery, PirResponse, PirSecret, QueryGenerator};
use super::wire::{encode_query, encode_responses};
use super::{PirError, PrimeTable};

/// Widest chunk one instance carries under a `modulus_bits` modulus.
pub fn chunk_bits(modulus_bits: u32) -> u64 {
    u64::from(modulus_bits / 4)
}

/// Parallel instances needed for `block_bits`-bit blocks.
pub fn chunk_count(block_bits: u64, modulus_bits: u32) -> usize {
    block_bits.div_ceil(chunk_bits(modulus_bits)).max(1) as usize
}

/// Splits a block into `count` chunks of `width` bits, least significant first.
pub fn split_block(block: &BigUint, width: u64, count: usize) -> Vec<BigUint> {
    let mask = (BigUint::one() << width) - 1u32;
    (0..count)
        .map(|k| (block >> (width * k as u64)) & &mask)
        .collect()
}

pub fn join_chunks(chunks: &[BigUint], width: u64) -> BigUint {
    chunks
        .iter()
        .enumerate()
        .fold(BigUint::zero(), |acc, (k, c)| acc | (c << (width * k as u64)))
}

/// One CRT exponent per chunk position.
pub fn encode_chunked(
    blocks: &[BigUint],
    block_bits: u64,
    table: &PrimeTable,
) -> Result<Vec<BigUint>, PirError> {
    let bound = BigUint::one() << block_bits;
    if let Some(index) = blocks.iter().position(|b| b >= &bound) {
        return Err(PirError::BlockOverflow {
            index: index + 1,
            bits: block_bits,
        });
    }
    let width = table.block_bits();
    let count = block_bits.div_ceil(width).max(1) as usize;
    let split: Vec<Vec<BigUint>> = blocks.iter().map(|b| split_block(b, width, count)).collect();
    (0..count)
        .into_par_iter()
        .map(|k| {
            let column: Vec<BigUint> = split.iter().map(|chunks| chunks[k].clone()).collect();
            encode_database(&column, table)
        })
        .collect()
}

/// Answers every chunk position with one shared `(mu, g)`.
pub fn respond_chunked(exponents: &[BigUint], query: &PirQuery) -> Vec<PirResponse> {
    exponents.par_iter().map(|e| respond(e, query)).collect()
}

pub fn recover_chunked(
    responses: &[PirResponse],
    secret: &PirSecret,
    table: &PrimeTable,
) -> Result<BigUint, PirError> {
    let chunks = responses
        .par_iter()
        .map(|r| recover(r, secret, table))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(join_chunks(&chunks, table.block_bits()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RetrievalStats {
    pub chunk_instances: usize,
    pub query_generations: usize,
    pub query_bytes: usize,
    pub response_bytes: usize,
    pub query_time: Duration,
    pub encode_time: Duration,
    pub respond_time: Duration,
    pub recover_time: Duration,
}

/// Client and server halves of one retrieval run back to back, with every
/// message passed through its serialized form.
pub fn chunked_retrieve<R: Rng + ?Sized>(
    blocks: &[BigUint],
    block_bits: u64,
    target_index: usize,
    generator: &mut QueryGenerator,
    rng: &mut R,
) -> Result<(BigUint, RetrievalStats), PirError> {
    let bits = generator.modulus_bits();
    let width = block_bits.min(chunk_bits(bits));
    let table = PrimeTable::build(blocks.len(), width, bits)?;
    let mut stats = RetrievalStats {
        chunk_instances: chunk_count(block_bits, bits),
        ..RetrievalStats::default()
    };

    let started = Instant::now();
    let (query, secret) = generator.generate(target_index, &table, rng)?;
    stats.query_generations = 1;
    stats.query_time = started.elapsed();
    let query_wire = encode_query(&query, bits);
    stats.query_bytes = query_wire.len();
    let query = super::wire::decode_query(&query_wire, bits)?;

    let started = Instant::now();
    let exponents = encode_chunked(blocks, block_bits, &table)?;
    stats.encode_time = started.elapsed();
    let started = Instant::now();
    let responses = respond_chunked(&exponents, &query);
    stats.respond_time = started.elapsed();
    let response_wire = encode_responses(&responses, bits)?;
    stats.response_bytes = response_wire.len();
    let responses = super::wire::decode_responses(&response_wire, bits)?;

    let started = Instant::now();
    let block = recover_chunked(&responses, &secret, &table)?;
    stats.recover_time = started.elapsed();
    Ok((block, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::pir::primes::random_bits;

    #[test]
    fn chunk_geometry() {
        assert_eq!(chunk_bits(2048), 512);
        assert_eq!(chunk_count(512, 2048), 1);
        assert_eq!(chunk_count(513, 2048), 2);
        assert_eq!(chunk_count(1024, 2048), 2);
        assert_eq!(chunk_count(4, 2048), 1);
        assert_eq!(chunk_count(4096, 2048), 8);
    }

    #[test]
    fn split_join_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        for _ in 0..50 {
            let block = random_bits(&mut rng, 700) >> rng.random_range(0..700u32);
            let chunks = split_block(&block, 64, 11);
            assert!(chunks.iter().all(|c| c.bits() <= 64));
            assert_eq!(join_chunks(&chunks, 64), block);
        }
    }

    #[test]
    fn two_instances_for_kilobit_blocks() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let blocks: Vec<BigUint> = (0..4).map(|_| random_bits(&mut rng, 1000)).collect();
        let mut generator = QueryGenerator::new(2048);
        let (block, stats) = chunked_retrieve(&blocks, 1024, 3, &mut generator, &mut rng).unwrap();
        assert_eq!(block, blocks[2]);
        assert_eq!(stats.chunk_instances, 2);
        assert_eq!(stats.query_generations, 1);
    }

    #[test]
    fn single_instance_matches_plain_retrieve() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let blocks: Vec<BigUint> = (0..4).map(|_| random_bits(&mut rng, 256)).collect();
        let mut generator = QueryGenerator::new(1024);
        let (block, stats) = chunked_retrieve(&blocks, 256, 2, &mut generator, &mut rng).unwrap();
        assert_eq!(stats.chunk_instances, 1);
        assert_eq!(block, blocks[1]);

        let table = PrimeTable::build(4, 256, 1024).unwrap();
        let e = encode_database(&blocks, &table).unwrap();
        assert_eq!(encode_chunked(&blocks, 256, &table).unwrap(), vec![e]);
    }

    #[test]
    fn oversized_block_is_rejected() {
        let table = PrimeTable::build(2, 8, 1024).unwrap();
        let blocks = vec![BigUint::from(1u32), BigUint::one() << 20u32];
        assert_eq!(
            encode_chunked(&blocks, 16, &table),
            Err(PirError::BlockOverflow { index: 2, bits: 16 })
        );
    }
}
