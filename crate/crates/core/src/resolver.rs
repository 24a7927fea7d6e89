//! Client-side resolution: name to identifier to aligned range, the overlay
//! query through the local node, and extraction of the target's records,
//! optionally retrieving only the target's block by cPIR.

use std::collections::HashMap;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ident::{
    canonical_name, form_range, hash_canonical, range_size_exponent, update_density, DensityEstimate, IdError,
    IdSpace, Identifier, QueryRange, SmoothingWeight,
};
use crate::overlay::{OverlayError, Ring};
use crate::pir::{
    chunk_bits, decode_query, decode_responses, encode_chunked, encode_query, encode_responses, recover_chunked,
    respond_chunked, PirError, PrimeTable, QueryGenerator,
};
use crate::store::{
    block_from_value, block_index, pack_blocks, unpack_block, RRSet, RecordSigner, RecordType, StoreError,
    StoredEntry, DEFAULT_BLOCK_BITS,
};

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cPIR failure: {0}")]
    Pir(#[from] PirError),
    #[error("malformed message: {0}")]
    Message(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    /// Expected number of non-empty identifiers per range.
    pub m: u64,
    pub rho: DensityEstimate,
    pub alpha: SmoothingWeight,
    pub use_pir: bool,
    pub n_pir: u64,
    pub block_bits: u64,
    pub modulus_bits: u32,
    /// Reuse the session's safe prime across cPIR queries.
    pub reuse_safe_prime: bool,
    pub record_type: RecordType,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            m: 128,
            rho: DensityEstimate::one(),
            alpha: SmoothingWeight::default(),
            use_pir: false,
            n_pir: 128,
            block_bits: DEFAULT_BLOCK_BITS,
            modulus_bits: 2048,
            reuse_safe_prime: false,
            record_type: RecordType::A,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ResolveError> {
        if self.m == 0 {
            return Err(ResolveError::Config("m must be at least 1".into()));
        }
        if self.use_pir && (self.n_pir == 0 || !self.n_pir.is_power_of_two()) {
            return Err(ResolveError::Config(format!("n_pir = {} is not a power of two", self.n_pir)));
        }
        if self.use_pir && (self.block_bits == 0 || self.block_bits % 8 != 0) {
            return Err(ResolveError::Config("block size must be a positive multiple of 8 bits".into()));
        }
        Ok(())
    }
}

/// The client's request to its local node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientRequest {
    pub start: Identifier,
    pub end: Identifier,
    pub prime_end_index: Option<u32>,
}

impl ClientRequest {
    /// `start[20] | end[20] | flag u8 | prime_end_index u32 if flag = 1`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(45);
        out.extend_from_slice(&self.start.to_be_bytes());
        out.extend_from_slice(&self.end.to_be_bytes());
        match self.prime_end_index {
            Some(index) => {
                out.push(1);
                out.extend_from_slice(&index.to_be_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ResolveError> {
        let bad = || ResolveError::Message("client request".into());
        if bytes.len() < 41 {
            return Err(bad());
        }
        let id = |b: &[u8]| Identifier::from_be_bytes(b.try_into().unwrap());
        let prime_end_index = match (bytes[40], bytes.len()) {
            (0, 41) => None,
            (1, 45) => Some(u32::from_be_bytes(bytes[41..45].try_into().unwrap())),
            _ => return Err(bad()),
        };
        Ok(ClientRequest {
            start: id(&bytes[..20]),
            end: id(&bytes[20..40]),
            prime_end_index,
        })
    }
}

/// `len u16 | numerator | len u16 | denominator`, big-endian.
pub fn encode_density_header(rho: &DensityEstimate) -> Vec<u8> {
    let mut out = Vec::new();
    for part in [rho.numerator(), rho.denominator()] {
        let bytes = part.to_bytes_be();
        out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

fn take<'a>(input: &mut &'a [u8], n: usize) -> Result<&'a [u8], ResolveError> {
    if input.len() < n {
        return Err(ResolveError::Message("truncated response".into()));
    }
    let (head, tail) = input.split_at(n);
    *input = tail;
    Ok(head)
}

pub fn decode_density_header(input: &mut &[u8]) -> Result<DensityEstimate, ResolveError> {
    let mut part = || -> Result<BigUint, ResolveError> {
        let len = u16::from_be_bytes(take(input, 2)?.try_into().unwrap()) as usize;
        Ok(BigUint::from_bytes_be(take(input, len)?))
    };
    let numerator = part()?;
    let denominator = part()?;
    Ok(DensityEstimate::from_parts(numerator, denominator)?)
}

/// Plain answer: density header, `count u32`, then the encoded entries.
pub fn encode_range_response(rho: &DensityEstimate, entries: &[StoredEntry]) -> Vec<u8> {
    let mut out = encode_density_header(rho);
    out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
    for entry in entries {
        entry.encode_into(&mut out);
    }
    out
}

pub fn decode_range_response(bytes: &[u8]) -> Result<(DensityEstimate, Vec<StoredEntry>), ResolveError> {
    let mut input = bytes;
    let rho = decode_density_header(&mut input)?;
    let count = u32::from_be_bytes(take(&mut input, 4)?.try_into().unwrap());
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        entries.push(StoredEntry::decode_from(&mut input)?);
    }
    if !input.is_empty() {
        return Err(ResolveError::Message("trailing bytes in range response".into()));
    }
    Ok((rho, entries))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolutionResult {
    pub name: String,
    pub target: Identifier,
    pub rrset: Option<RRSet>,
    pub range: QueryRange,
    pub entries_in_range: usize,
    pub messages: u64,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub cache_hit: bool,
    pub splits: usize,
    pub pir_used: bool,
    /// 1-based block and prime index when cPIR answered.
    pub pir_block: Option<usize>,
    pub pir_fallback: Option<String>,
}

impl ResolutionResult {
    pub fn found(&self) -> bool {
        self.rrset.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureVerdict {
    Accepted,
    Rejected,
}

/// Accepts when the signature is present and equals the signer's digest of
/// the record bytes.
pub fn verify_signatures(rrset: &RRSet, signer: &RecordSigner) -> SignatureVerdict {
    if !rrset.signature().is_empty() && signer.sign(rrset) == rrset.signature() {
        SignatureVerdict::Accepted
    } else {
        SignatureVerdict::Rejected
    }
}

/// Reduces a full SHA-1 identifier into `space`, keeping its low bits.
pub fn project(id: Identifier, space: IdSpace) -> Identifier {
    id.and(space.max_id())
}

/// One client attached to one local node.
pub struct Resolver {
    config: ClientConfig,
    local_node: usize,
    generator: QueryGenerator,
    tables: HashMap<(u64, u64, u32), Arc<PrimeTable>>,
    rng: ChaCha20Rng,
}

impl Resolver {
    pub fn new(config: ClientConfig, local_node: usize, seed: u64) -> Result<Self, ResolveError> {
        config.validate()?;
        let generator = QueryGenerator::new(config.modulus_bits).reuse_safe_prime(config.reuse_safe_prime);
        Ok(Resolver {
            config,
            local_node,
            generator,
            tables: HashMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn density(&self) -> &DensityEstimate {
        &self.config.rho
    }

    pub fn local_node(&self) -> usize {
        self.local_node
    }

    /// Takes the local node's density as the starting estimate, as a client
    /// does on attach before any smoothing.
    pub fn bootstrap_density(&mut self, ring: &Ring) -> Result<(), ResolveError> {
        self.config.rho = ring.node_density(self.local_node)?;
        Ok(())
    }

    /// The aligned range this client would query for `target` right now.
    pub fn range_for(&self, target: Identifier, space: IdSpace) -> Result<QueryRange, IdError> {
        let s = range_size_exponent(self.config.m, &self.config.rho).min(space.bits());
        form_range(target, s, space)
    }

    fn table(&mut self, n_pir: u64) -> Result<Arc<PrimeTable>, PirError> {
        let width = self.config.block_bits.min(chunk_bits(self.config.modulus_bits));
        let key = (n_pir, width, self.config.modulus_bits);
        if let Some(t) = self.tables.get(&key) {
            return Ok(t.clone());
        }
        let table = Arc::new(PrimeTable::build(n_pir as usize, width, self.config.modulus_bits)?);
        self.tables.insert(key, table.clone());
        Ok(table)
    }

    /// Resolves `name` over the plain or cPIR path per the configuration.
    pub fn resolve(&mut self, name: &str, ring: &mut Ring, now: f64) -> Result<ResolutionResult, ResolveError> {
        let canonical = canonical_name(name)?;
        let target = project(hash_canonical(&canonical), ring.space());
        self.resolve_at(&canonical, target, ring, now)
    }

    /// Resolves a name whose identifier the caller already knows.
    pub fn resolve_at(&mut self, name: &str, target: Identifier, ring: &mut Ring, now: f64) -> Result<ResolutionResult, ResolveError> {
        if self.config.use_pir {
            self.resolve_pir_at(name, target, ring, now)
        } else {
            self.resolve_plain_at(name, target, ring, now)
        }
    }

    fn fetch(&mut self, target: Identifier, prime_end: Option<u32>, ring: &mut Ring, now: f64) -> Result<Fetched, ResolveError> {
        let range = self.range_for(target, ring.space())?;
        let request = ClientRequest {
            start: range.start(),
            end: range.end(),
            prime_end_index: prime_end,
        };
        let request_bytes = request.encode();
        let request = ClientRequest::decode(&request_bytes)?;
        let range = QueryRange::new(request.start, range.size_exponent())?;
        let outcome = ring.query(self.local_node, range, request.prime_end_index, now)?;
        let learned = ring.node_density(self.local_node)?;
        Ok(Fetched {
            range,
            request_bytes: request_bytes.len(),
            learned,
            outcome,
        })
    }

    fn learn(&mut self, learned: &DensityEstimate) {
        self.config.rho = update_density(&self.config.rho, learned, &self.config.alpha);
    }

    fn pick(&self, name: &str, entries: &[StoredEntry]) -> Option<RRSet> {
        entries
            .iter()
            .find(|e| e.name() == name)
            .and_then(|e| e.rrset(self.config.record_type))
            .cloned()
    }

    /// The whole range comes back; the target is picked out locally.
    pub fn resolve_plain_at(&mut self, name: &str, target: Identifier, ring: &mut Ring, now: f64) -> Result<ResolutionResult, ResolveError> {
        let name = canonical_name(name)?;
        let fetched = self.fetch(target, None, ring, now)?;
        let wire = encode_range_response(&fetched.learned, &fetched.outcome.entries);
        let (learned, entries) = decode_range_response(&wire)?;
        self.learn(&learned);
        Ok(ResolutionResult {
            rrset: self.pick(&name, &entries),
            name,
            target,
            range: fetched.range,
            entries_in_range: entries.len(),
            messages: fetched.outcome.messages + 2,
            bytes_up: fetched.request_bytes,
            bytes_down: wire.len(),
            cache_hit: fetched.outcome.cache_hit,
            splits: fetched.outcome.splits,
            pir_used: false,
            pir_block: None,
            pir_fallback: None,
        })
    }

    /// The local node packs the range into blocks and answers a cPIR query
    /// for the target's block; packing overflow falls back to the plain path.
    pub fn resolve_pir_at(&mut self, name: &str, target: Identifier, ring: &mut Ring, now: f64) -> Result<ResolutionResult, ResolveError> {
        let name = canonical_name(name)?;
        let range = self.range_for(target, ring.space())?;
        let n_pir = self.config.n_pir.min(1u64 << range.size_exponent().min(63));
        let prime_end = u32::try_from(n_pir).map_err(|_| ResolveError::Config("n_pir too large".into()))?;
        let fetched = self.fetch(target, Some(prime_end), ring, now)?;
        let bits = self.config.modulus_bits;
        let block_bits = self.config.block_bits;

        // Local node side.
        let layout = match pack_blocks(&fetched.outcome.entries, &fetched.range, n_pir, block_bits) {
            Ok(layout) => layout,
            Err(StoreError::BlockOverflow { block, .. }) => {
                let mut plain = self.resolve_plain_at(&name, target, ring, now)?;
                plain.messages += fetched.outcome.messages;
                plain.pir_fallback = Some(format!("block {block} overflowed {block_bits} bits"));
                return Ok(plain);
            }
            Err(other) => return Err(other.into()),
        };
        let table = self.table(n_pir)?;

        // Client side.
        let j = block_index(&fetched.range, n_pir, target)?;
        let (query, secret) = self.generator.generate(j, &table, &mut self.rng)?;
        let query_wire = encode_query(&query, bits);

        // Local node side.
        let query = decode_query(&query_wire, bits)?;
        if query.prime_end_index != prime_end {
            return Err(ResolveError::Message("prime end index disagrees with the request".into()));
        }
        let exponents = encode_chunked(&layout.block_values(), block_bits, &table)?;
        let responses = respond_chunked(&exponents, &query);
        let mut down = encode_density_header(&fetched.learned);
        down.extend(encode_responses(&responses, bits)?);

        // Client side.
        let mut input = down.as_slice();
        let learned = decode_density_header(&mut input)?;
        let responses = decode_responses(input, bits)?;
        let value = recover_chunked(&responses, &secret, &table)?;
        let block = block_from_value(&value, block_bits)?;
        let entries = unpack_block(&block)?;
        self.learn(&learned);
        Ok(ResolutionResult {
            rrset: self.pick(&name, &entries),
            name,
            target,
            range: fetched.range,
            entries_in_range: fetched.outcome.entries.len(),
            messages: fetched.outcome.messages + 2,
            bytes_up: fetched.request_bytes + query_wire.len(),
            bytes_down: down.len(),
            cache_hit: fetched.outcome.cache_hit,
            splits: fetched.outcome.splits,
            pir_used: true,
            pir_block: Some(j),
            pir_fallback: None,
        })
    }
}

struct Fetched {
    range: QueryRange,
    request_bytes: usize,
    learned: DensityEstimate,
    outcome: crate::overlay::QueryOutcome,
}
