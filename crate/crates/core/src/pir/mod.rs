//! Gentry-Ramzan computational PIR.
//!
//! Client and server share a table of consecutive primes `p_i` and prime
//! powers `pi_i = p_i^c_i` with `pi_i >= 2^l`. The server folds its `t`
//! blocks into one integer `e` with `e = C_i (mod pi_i)` and answers a query
//! `(mu, g)` with `g^e mod mu`. The client built `g` so that `pi_i` divides
//! its order; raising the answer to the private cofactor `q` lands in the
//! order-`pi_i` subgroup where a Pohlig-Hellman walk reads off `C_i`.

mod chunked;
pub mod primes;
mod scheme;
mod table;
mod wire;

pub use chunked::{
    chunk_bits, chunk_count, chunked_retrieve, encode_chunked, join_chunks, recover_chunked, respond_chunked,
    split_block, RetrievalStats,
};
pub use scheme::{
    encode_database, generate_query, recover, respond, PirQuery, PirResponse, PirSecret,
    QueryGenerator, GENERATOR_SEARCH_BUDGET,
};
pub use table::{PrimeTable, FIRST_PRIME, SUPPORTED_MODULUS_BITS};
pub use wire::{
    ceil_log2, communication_cost, decode_query, decode_responses, encode_query, encode_responses, query_framing_bits,
    response_framing_bits, CommunicationCost, LENGTH_PREFIX_BITS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PirError {
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("block {index} does not fit in {bits} bits")]
    BlockOverflow { index: usize, bits: u64 },
    #[error("generation timeout: {0}")]
    GenerationTimeout(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("malformed message: {0}")]
    Wire(String),
}
