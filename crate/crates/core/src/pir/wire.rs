//! Byte layouts of the cPIR exchange.
//!
//! Query: `prime_end_index` (u32, big-endian), then the modulus and the
//! generator, each as a u32 length followed by `b/8` big-endian bytes.
//! Response: one u32 length plus `b/8` big-endian bytes per chunk.

use num_bigint::BigUint;

use super::chunked::chunk_count;
use super::scheme::{PirQuery, PirResponse};
use super::PirError;

pub const LENGTH_PREFIX_BITS: u64 = 32;

/// `ceil(log2 t)`, with `ceil_log2(1) = 0`.
pub fn ceil_log2(t: u64) -> u64 {
    assert!(t >= 1, "ceil_log2 of zero");
    u64::from(64 - (t - 1).leading_zeros())
}

fn element_bytes(modulus_bits: u32) -> usize {
    (modulus_bits as usize).div_ceil(8)
}

fn put_element(out: &mut Vec<u8>, value: &BigUint, width: usize) -> Result<(), PirError> {
    let bytes = value.to_bytes_be();
    if bytes.len() > width {
        return Err(PirError::Wire(format!(
            "{}-byte value exceeds the {width}-byte field",
            bytes.len()
        )));
    }
    out.extend_from_slice(&(width as u32).to_be_bytes());
    out.resize(out.len() + width - bytes.len(), 0);
    out.extend_from_slice(&bytes);
    Ok(())
}

fn take<'a>(input: &mut &'a [u8], n: usize) -> Result<&'a [u8], PirError> {
    if input.len() < n {
        return Err(PirError::Wire(format!(
            "needed {n} bytes, {} remain",
            input.len()
        )));
    }
    let (head, tail) = input.split_at(n);
    *input = tail;
    Ok(head)
}

fn take_element(input: &mut &[u8], width: usize) -> Result<BigUint, PirError> {
    let len = u32::from_be_bytes(take(input, 4)?.try_into().unwrap()) as usize;
    if len != width {
        return Err(PirError::Wire(format!("element length {len}, expected {width}")));
    }
    Ok(BigUint::from_bytes_be(take(input, len)?))
}

pub fn encode_query(query: &PirQuery, modulus_bits: u32) -> Vec<u8> {
    let width = element_bytes(modulus_bits);
    let mut out = Vec::with_capacity(12 + 2 * width);
    out.extend_from_slice(&query.prime_end_index.to_be_bytes());
    put_element(&mut out, &query.modulus, width).expect("modulus fits its declared width");
    put_element(&mut out, &query.generator, width).expect("generator is below the modulus");
    out
}

pub fn decode_query(bytes: &[u8], modulus_bits: u32) -> Result<PirQuery, PirError> {
    let width = element_bytes(modulus_bits);
    let mut input = bytes;
    let prime_end_index = u32::from_be_bytes(take(&mut input, 4)?.try_into().unwrap());
    let modulus = take_element(&mut input, width)?;
    let generator = take_element(&mut input, width)?;
    if !input.is_empty() {
        return Err(PirError::Wire(format!("{} trailing bytes after query", input.len())));
    }
    Ok(PirQuery {
        modulus,
        generator,
        prime_end_index,
    })
}

pub fn encode_responses(responses: &[PirResponse], modulus_bits: u32) -> Result<Vec<u8>, PirError> {
    let width = element_bytes(modulus_bits);
    let mut out = Vec::with_capacity(responses.len() * (4 + width));
    for response in responses {
        put_element(&mut out, &response.value, width)?;
    }
    Ok(out)
}

pub fn decode_responses(bytes: &[u8], modulus_bits: u32) -> Result<Vec<PirResponse>, PirError> {
    let width = element_bytes(modulus_bits);
    let mut input = bytes;
    let mut responses = Vec::new();
    while !input.is_empty() {
        responses.push(PirResponse {
            value: take_element(&mut input, width)?,
        });
    }
    Ok(responses)
}

/// Serialized query bits beyond `ceil(log2 t) + 2b`: the unused high bits of
/// the 4-byte index plus two length prefixes.
pub fn query_framing_bits(t: u64) -> u64 {
    32 - ceil_log2(t) + 2 * LENGTH_PREFIX_BITS
}

pub fn response_framing_bits(chunks: usize) -> u64 {
    LENGTH_PREFIX_BITS * chunks as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommunicationCost {
    pub upstream_bits: u64,
    pub downstream_bits: u64,
    /// Bits of shipping the whole database instead.
    pub trivial_bits: u64,
}

impl CommunicationCost {
    pub fn total_bits(&self) -> u64 {
        self.upstream_bits + self.downstream_bits
    }

    pub fn compression_ratio(&self) -> f64 {
        self.trivial_bits as f64 / self.total_bits() as f64
    }
}

pub fn communication_cost(t: u64, block_bits: u64, modulus_bits: u32) -> CommunicationCost {
    let b = u64::from(modulus_bits);
    CommunicationCost {
        upstream_bits: ceil_log2(t) + 2 * b,
        downstream_bits: b * chunk_count(block_bits, modulus_bits) as u64,
        trivial_bits: t * block_bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        let cases = [(1u64, 0u64), (2, 1), (3, 2), (4, 2), (5, 3), (256, 8), (257, 9)];
        for (t, expected) in cases {
            assert_eq!(ceil_log2(t), expected, "t={t}");
        }
    }

    #[test]
    fn cost_examples() {
        assert_eq!(communication_cost(256, 512, 2048).total_bits(), 6152);
        assert_eq!(communication_cost(2, 1024, 2048).total_bits(), 1 + 4096 + 2048 * 2);
        let base = communication_cost(256, 512, 2048);
        assert_eq!(base.upstream_bits, 8 + 4096);
        assert_eq!(base.downstream_bits, 2048);
    }

    #[test]
    fn compression_grows_with_t_and_l() {
        let ts = [2u64, 16, 128, 1024];
        let ls = [512u64, 1024, 4096, 16384];
        for &l in &ls {
            let ratios: Vec<f64> = ts.iter().map(|&t| communication_cost(t, l, 2048).compression_ratio()).collect();
            assert!(ratios.windows(2).all(|w| w[0] < w[1]), "l={l}: {ratios:?}");
        }
        for &t in &ts {
            let ratios: Vec<f64> = ls.iter().map(|&l| communication_cost(t, l, 2048).compression_ratio()).collect();
            assert!(ratios.windows(2).all(|w| w[0] < w[1]), "t={t}: {ratios:?}");
        }
    }

    #[test]
    fn query_round_trip_and_size() {
        let query = PirQuery {
            modulus: (BigUint::from(1u32) << 2047u32) + 12345u32,
            generator: BigUint::from(77u32),
            prime_end_index: 256,
        };
        let bytes = encode_query(&query, 2048);
        assert_eq!(
            bytes.len() as u64 * 8,
            communication_cost(256, 512, 2048).upstream_bits + query_framing_bits(256)
        );
        assert_eq!(decode_query(&bytes, 2048).unwrap(), query);
        assert!(decode_query(&bytes[..bytes.len() - 1], 2048).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_query(&extra, 2048).is_err());
    }

    #[test]
    fn responses_round_trip_and_size() {
        let responses: Vec<PirResponse> = (1..=3u32)
            .map(|v| PirResponse { value: BigUint::from(v) << 2000u32 })
            .collect();
        let bytes = encode_responses(&responses, 2048).unwrap();
        assert_eq!(bytes.len() as u64 * 8, 3 * 2048 + response_framing_bits(3));
        assert_eq!(decode_responses(&bytes, 2048).unwrap(), responses);
        let too_big = [PirResponse { value: BigUint::from(1u32) << 2048u32 }];
        assert!(encode_responses(&too_big, 2048).is_err());
    }
}
