//! Resource records keyed by identifier, corpus and trace ingestion, and the
//! block layout that turns one query range into a cPIR database.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::ops::Bound;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ident::{canonical_name, hash_canonical, IdError, IdSpace, Identifier, QueryRange};

/// TTL of synthetic records when the trace does not supply one.
pub const DEFAULT_TTL: u32 = 3600;

/// Default cPIR block capacity in bits.
pub const DEFAULT_BLOCK_BITS: u64 = 4096;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PPDNSDB1";

pub const TRACE_HEADER: &str = "timestamp_seconds,name,ttl_seconds,response_bytes";

const SIGNATURE_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error("invalid record set: {0}")]
    InvalidRecord(String),
    #[error("block {block} needs {needed_bits} bits but holds {capacity_bits}")]
    BlockOverflow {
        block: usize,
        needed_bits: u64,
        capacity_bits: u64,
    },
    #[error("malformed encoding: {0}")]
    Decode(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordType {
    A,
    Ns,
    Cname,
    Mx,
    Txt,
    Aaaa,
    Other(u16),
}

impl RecordType {
    pub fn code(self) -> u16 {
        match self {
            RecordType::A => 1,
            RecordType::Ns => 2,
            RecordType::Cname => 5,
            RecordType::Mx => 15,
            RecordType::Txt => 16,
            RecordType::Aaaa => 28,
            RecordType::Other(code) => code,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code {
            1 => RecordType::A,
            2 => RecordType::Ns,
            5 => RecordType::Cname,
            15 => RecordType::Mx,
            16 => RecordType::Txt,
            28 => RecordType::Aaaa,
            other => RecordType::Other(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordClass {
    In,
    Ch,
    Other(u16),
}

impl RecordClass {
    pub fn code(self) -> u16 {
        match self {
            RecordClass::In => 1,
            RecordClass::Ch => 3,
            RecordClass::Other(code) => code,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code {
            1 => RecordClass::In,
            3 => RecordClass::Ch,
            other => RecordClass::Other(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub name: String,
    pub rtype: RecordType,
    pub rclass: RecordClass,
    pub ttl: u32,
    pub data: Vec<u8>,
}

/// All records for one name and type, with an opaque signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RRSet {
    name: String,
    rtype: RecordType,
    rclass: RecordClass,
    records: Vec<ResourceRecord>,
    signature: Vec<u8>,
}

impl RRSet {
    pub fn new(records: Vec<ResourceRecord>, signature: Vec<u8>) -> Result<Self, StoreError> {
        let first = records
            .first()
            .ok_or_else(|| StoreError::InvalidRecord("empty record set".into()))?;
        let name = canonical_name(&first.name)?;
        let (rtype, rclass) = (first.rtype, first.rclass);
        let mut canonical = Vec::with_capacity(records.len());
        for record in records {
            if canonical_name(&record.name)? != name || record.rtype != rtype || record.rclass != rclass {
                return Err(StoreError::InvalidRecord(format!(
                    "records for {name} do not share name, type and class"
                )));
            }
            if record.data.len() > u16::MAX as usize {
                return Err(StoreError::InvalidRecord("record data over 65535 bytes".into()));
            }
            canonical.push(ResourceRecord {
                name: name.clone(),
                ..record
            });
        }
        if canonical.len() > u16::MAX as usize || signature.len() > u16::MAX as usize {
            return Err(StoreError::InvalidRecord("record set too large".into()));
        }
        Ok(RRSet {
            name,
            rtype,
            rclass,
            records: canonical,
            signature,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rtype(&self) -> RecordType {
        self.rtype
    }

    pub fn rclass(&self) -> RecordClass {
        self.rclass
    }

    pub fn records(&self) -> &[ResourceRecord] {
        &self.records
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn set_signature(&mut self, signature: Vec<u8>) {
        self.signature = signature;
    }

    /// Mutable record access; the signature is left untouched.
    pub fn records_mut(&mut self) -> &mut [ResourceRecord] {
        &mut self.records
    }

    /// The set TTL: the smallest member TTL.
    pub fn ttl(&self) -> u32 {
        self.records.iter().map(|r| r.ttl).min().expect("record sets are non-empty")
    }

    /// Bytes covered by the signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.name.len() as u8);
        out.extend_from_slice(self.name.as_bytes());
        out.extend_from_slice(&self.rtype.code().to_be_bytes());
        out.extend_from_slice(&self.rclass.code().to_be_bytes());
        for record in &self.records {
            out.extend_from_slice(&record.ttl.to_be_bytes());
            out.extend_from_slice(&(record.data.len() as u16).to_be_bytes());
            out.extend_from_slice(&record.data);
        }
        out
    }
}

/// Keyed digest standing in for a real signature scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSigner {
    key: [u8; 32],
}

impl RecordSigner {
    pub fn new(key: [u8; 32]) -> Self {
        RecordSigner { key }
    }

    pub fn from_seed(seed: u64) -> Self {
        let key: [u8; 32] = Sha256::new()
            .chain_update(b"ppdns record signer")
            .chain_update(seed.to_be_bytes())
            .finalize()
            .into();
        RecordSigner { key }
    }

    pub fn sign(&self, rrset: &RRSet) -> Vec<u8> {
        let digest = Sha256::new()
            .chain_update(self.key)
            .chain_update(rrset.signed_bytes())
            .finalize();
        digest[..SIGNATURE_LEN].to_vec()
    }

    pub fn sign_in_place(&self, rrset: &mut RRSet) {
        let signature = self.sign(rrset);
        rrset.set_signature(signature);
    }
}

impl Default for RecordSigner {
    fn default() -> Self {
        RecordSigner::from_seed(0)
    }
}

/// A name's record sets bound to its identifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEntry {
    identifier: Identifier,
    name: String,
    rrsets: Vec<RRSet>,
}

impl StoredEntry {
    pub fn new(name: &str, rrsets: Vec<RRSet>) -> Result<Self, StoreError> {
        let name = canonical_name(name)?;
        let identifier = hash_canonical(&name);
        Self::at(identifier, &name, rrsets)
    }

    /// An entry pinned to an explicit identifier, for worked examples in
    /// small spaces where the SHA-1 placement is meaningless.
    pub fn at(identifier: Identifier, name: &str, rrsets: Vec<RRSet>) -> Result<Self, StoreError> {
        let name = canonical_name(name)?;
        if rrsets.len() > u8::MAX as usize {
            return Err(StoreError::InvalidRecord(format!("{name} has too many record sets")));
        }
        if let Some(other) = rrsets.iter().find(|r| r.name != name) {
            return Err(StoreError::InvalidRecord(format!(
                "record set for {} stored under {name}",
                other.name
            )));
        }
        Ok(StoredEntry {
            identifier,
            name,
            rrsets,
        })
    }

    pub fn identifier(&self) -> Identifier {
        self.identifier
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rrsets(&self) -> &[RRSet] {
        &self.rrsets
    }

    pub fn rrsets_mut(&mut self) -> &mut [RRSet] {
        &mut self.rrsets
    }

    pub fn rrset(&self, rtype: RecordType) -> Option<&RRSet> {
        self.rrsets.iter().find(|r| r.rtype == rtype)
    }

    /// Smallest TTL over every record set, for cache expiry.
    pub fn min_ttl(&self) -> Option<u32> {
        self.rrsets.iter().map(RRSet::ttl).min()
    }

    pub fn encoded_len(&self) -> usize {
        let mut n = 20 + 1 + self.name.len() + 1;
        for rrset in &self.rrsets {
            n += 6;
            n += rrset.records.iter().map(|r| 6 + r.data.len()).sum::<usize>();
            n += 2 + rrset.signature.len();
        }
        n
    }

    /// `id[20] | name_len u8 | name | rrset_count u8 | rrsets`, where each
    /// rrset is `type u16 | class u16 | count u16 | (ttl u32 | len u16 | data)*
    /// | sig_len u16 | sig`. All integers big-endian.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.identifier.to_be_bytes());
        out.push(self.name.len() as u8);
        out.extend_from_slice(self.name.as_bytes());
        out.push(self.rrsets.len() as u8);
        for rrset in &self.rrsets {
            out.extend_from_slice(&rrset.rtype.code().to_be_bytes());
            out.extend_from_slice(&rrset.rclass.code().to_be_bytes());
            out.extend_from_slice(&(rrset.records.len() as u16).to_be_bytes());
            for record in &rrset.records {
                out.extend_from_slice(&record.ttl.to_be_bytes());
                out.extend_from_slice(&(record.data.len() as u16).to_be_bytes());
                out.extend_from_slice(&record.data);
            }
            out.extend_from_slice(&(rrset.signature.len() as u16).to_be_bytes());
            out.extend_from_slice(&rrset.signature);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(input: &mut &[u8]) -> Result<Self, StoreError> {
        let mut id = [0u8; 20];
        id.copy_from_slice(take(input, 20)?);
        let identifier = Identifier::from_be_bytes(id);
        let name_len = take(input, 1)?[0] as usize;
        let name = std::str::from_utf8(take(input, name_len)?)
            .map_err(|_| StoreError::Decode("name is not UTF-8".into()))?
            .to_string();
        let rrset_count = take(input, 1)?[0];
        let mut rrsets = Vec::with_capacity(rrset_count as usize);
        for _ in 0..rrset_count {
            let rtype = RecordType::from_code(take_u16(input)?);
            let rclass = RecordClass::from_code(take_u16(input)?);
            let count = take_u16(input)?;
            let mut records = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let ttl = u32::from_be_bytes(take(input, 4)?.try_into().unwrap());
                let len = take_u16(input)? as usize;
                records.push(ResourceRecord {
                    name: name.clone(),
                    rtype,
                    rclass,
                    ttl,
                    data: take(input, len)?.to_vec(),
                });
            }
            let sig_len = take_u16(input)? as usize;
            let signature = take(input, sig_len)?.to_vec();
            rrsets.push(RRSet::new(records, signature)?);
        }
        StoredEntry::at(identifier, &name, rrsets)
    }
}

fn take<'a>(input: &mut &'a [u8], n: usize) -> Result<&'a [u8], StoreError> {
    if input.len() < n {
        return Err(StoreError::Decode(format!("truncated: needed {n}, have {}", input.len())));
    }
    let (head, tail) = input.split_at(n);
    *input = tail;
    Ok(head)
}

fn take_u16(input: &mut &[u8]) -> Result<u16, StoreError> {
    Ok(u16::from_be_bytes(take(input, 2)?.try_into().unwrap()))
}

/// One line of a query trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_seconds: f64,
    pub name: String,
    pub ttl_seconds: u32,
    pub response_bytes: u32,
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>, StoreError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers().map_err(|e| StoreError::Trace(e.to_string()))?;
    let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(StoreError::Trace(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (line, row) in csv.deserialize::<TraceRecord>().enumerate() {
        let row = row.map_err(|e| StoreError::Trace(format!("row {}: {e}", line + 2)))?;
        if !(row.timestamp_seconds >= last) {
            return Err(StoreError::Trace(format!(
                "row {}: timestamps must be nondecreasing",
                line + 2
            )));
        }
        last = row.timestamp_seconds;
        out.push(row);
    }
    Ok(out)
}

pub fn write_trace<W: Write>(writer: W, records: &[TraceRecord]) -> Result<(), StoreError> {
    let mut csv = csv::Writer::from_writer(writer);
    for record in records {
        csv.serialize(record).map_err(|e| StoreError::Trace(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// Last TTL seen per canonical name.
pub fn trace_ttls(records: &[TraceRecord]) -> HashMap<String, u32> {
    records
        .iter()
        .filter_map(|r| canonical_name(&r.name).ok().map(|n| (n, r.ttl_seconds)))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    pub default_ttl: Option<u32>,
    pub ttl_overrides: HashMap<String, u32>,
    pub signer: RecordSigner,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub distinct: usize,
    pub duplicates: usize,
    pub skipped: usize,
}

/// Every stored name, ordered by identifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameStore {
    space: IdSpace,
    entries: BTreeMap<Identifier, StoredEntry>,
}

impl Default for NameStore {
    fn default() -> Self {
        NameStore::new(IdSpace::SHA1)
    }
}

impl NameStore {
    pub fn new(space: IdSpace) -> Self {
        NameStore {
            space,
            entries: BTreeMap::new(),
        }
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the entry at its identifier.
    pub fn insert(&mut self, entry: StoredEntry) -> Result<Option<StoredEntry>, StoreError> {
        if !self.space.contains(entry.identifier) {
            return Err(StoreError::Parameter(format!(
                "{} lies outside a {}-bit space",
                entry.identifier,
                self.space.bits()
            )));
        }
        Ok(self.entries.insert(entry.identifier, entry))
    }

    pub fn get(&self, id: Identifier) -> Option<&StoredEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &StoredEntry> + '_ {
        self.entries.values()
    }

    pub fn identifiers(&self) -> impl Iterator<Item = Identifier> + '_ {
        self.entries.keys().copied()
    }

    /// Entries with identifiers in `[start, end]`, ascending.
    pub fn lookup_range(&self, range: &QueryRange) -> Vec<StoredEntry> {
        self.between(range.start(), range.end()).cloned().collect()
    }

    /// Entries in the inclusive interval `[low, high]`; empty when `low > high`.
    pub fn between(&self, low: Identifier, high: Identifier) -> impl Iterator<Item = &StoredEntry> + '_ {
        (low <= high)
            .then(|| self.entries.range(low..=high).map(|(_, e)| e))
            .into_iter()
            .flatten()
    }

    /// Entries in the clockwise arc `(from, to]`; the whole store when the
    /// endpoints coincide.
    pub fn count_in_arc(&self, from: Identifier, to: Identifier) -> u64 {
        use Bound::{Excluded, Included, Unbounded};
        let count = |lo: Bound<Identifier>, hi: Bound<Identifier>| self.entries.range((lo, hi)).count() as u64;
        if from < to {
            count(Excluded(from), Included(to))
        } else {
            count(Excluded(from), Unbounded) + count(Unbounded, Included(to))
        }
    }

    /// Builds a store from one name per line. Blank lines are ignored;
    /// lines that are not valid names are counted and skipped.
    pub fn ingest_names<R: BufRead>(reader: R, options: &IngestOptions) -> Result<(Self, IngestReport), StoreError> {
        let mut store = NameStore::default();
        let mut report = IngestReport::default();
        let mut seen = HashSet::new();
        let default_ttl = options.default_ttl.unwrap_or(DEFAULT_TTL);
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            report.lines += 1;
            let Ok(name) = canonical_name(line) else {
                report.skipped += 1;
                continue;
            };
            if !seen.insert(name.clone()) {
                report.duplicates += 1;
                continue;
            }
            let ttl = options.ttl_overrides.get(&name).copied().unwrap_or(default_ttl);
            store.insert(synthetic_entry(&name, ttl, &options.signer)?)?;
        }
        report.distinct = store.len();
        Ok((store, report))
    }

    pub fn write_snapshot<W: Write>(&self, mut writer: W) -> Result<(), StoreError> {
        writer.write_all(SNAPSHOT_MAGIC)?;
        writer.write_all(&[self.space.bits() as u8])?;
        writer.write_all(&(self.entries.len() as u64).to_be_bytes())?;
        let mut buf = Vec::new();
        for entry in self.entries.values() {
            buf.clear();
            entry.encode_into(&mut buf);
            writer.write_all(&buf)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut reader: R) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let mut input = bytes.as_slice();
        if take(&mut input, 8)? != SNAPSHOT_MAGIC {
            return Err(StoreError::Decode("not a store snapshot".into()));
        }
        let space = IdSpace::new(u32::from(take(&mut input, 1)?[0]))?;
        let count = u64::from_be_bytes(take(&mut input, 8)?.try_into().unwrap());
        let mut store = NameStore::new(space);
        for _ in 0..count {
            let entry = StoredEntry::decode_from(&mut input)?;
            if store.insert(entry)?.is_some() {
                return Err(StoreError::Decode("duplicate identifier in snapshot".into()));
            }
        }
        if !input.is_empty() {
            return Err(StoreError::Decode(format!("{} trailing bytes", input.len())));
        }
        Ok(store)
    }
}

/// One signed A record whose address is derived from the identifier.
pub fn synthetic_entry(name: &str, ttl: u32, signer: &RecordSigner) -> Result<StoredEntry, StoreError> {
    let name = canonical_name(name)?;
    let id = hash_canonical(&name);
    let address = id.to_be_bytes()[..4].to_vec();
    let record = ResourceRecord {
        name: name.clone(),
        rtype: RecordType::A,
        rclass: RecordClass::In,
        ttl,
        data: address,
    };
    let mut rrset = RRSet::new(vec![record], Vec::new())?;
    signer.sign_in_place(&mut rrset);
    StoredEntry::at(id, &name, vec![rrset])
}

/// Block `j` (1-based) of `n_pir` equal sub-intervals holding `target`.
pub fn block_index(range: &QueryRange, n_pir: u64, target: Identifier) -> Result<usize, StoreError> {
    let shift = block_shift(range, n_pir)?;
    if !range.contains(target) {
        return Err(StoreError::Parameter(format!("{target} is outside {range}")));
    }
    let offset = target.wrapping_sub(range.start()).shr(shift);
    Ok(offset.low_u64() as usize + 1)
}

/// `log2` of the sub-interval width.
fn block_shift(range: &QueryRange, n_pir: u64) -> Result<u32, StoreError> {
    if !n_pir.is_power_of_two() {
        return Err(StoreError::Parameter(format!("n_pir = {n_pir} is not a power of two")));
    }
    let log_n = n_pir.trailing_zeros();
    if log_n > range.size_exponent() {
        return Err(StoreError::Parameter(format!(
            "n_pir = {n_pir} exceeds the 2^{} identifiers of the range",
            range.size_exponent()
        )));
    }
    Ok(range.size_exponent() - log_n)
}

/// A range split into `n_pir` blocks of `block_bits` bits each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub range: QueryRange,
    pub n_pir: u64,
    pub block_bits: u64,
    pub blocks: Vec<Vec<u8>>,
}

impl BlockLayout {
    /// `[first, last]` identifiers of the 1-based block `j`.
    pub fn sub_interval(&self, j: usize) -> (Identifier, Identifier) {
        let shift = block_shift(&self.range, self.n_pir).expect("layout was validated");
        sub_interval(&self.range, shift, j)
    }

    pub fn block_value(&self, j: usize) -> BigUint {
        BigUint::from_bytes_be(&self.blocks[j - 1])
    }

    pub fn block_values(&self) -> Vec<BigUint> {
        self.blocks.iter().map(|b| BigUint::from_bytes_be(b)).collect()
    }
}

fn sub_interval(range: &QueryRange, shift: u32, j: usize) -> (Identifier, Identifier) {
    let width = Identifier::pow2(shift);
    let mut first = range.start();
    // Multiplying by j - 1 as a shift-and-add keeps everything in 160 bits.
    let mut k = (j - 1) as u64;
    let mut step = width;
    while k > 0 {
        if k & 1 == 1 {
            first = first.wrapping_add(step);
        }
        step = step.wrapping_add(step);
        k >>= 1;
    }
    (first, first.or(Identifier::low_mask(shift)))
}

/// Serializes each sub-interval's entries into its block:
/// `count u16 | entries | zero padding`.
pub fn pack_blocks(
    entries: &[StoredEntry],
    range: &QueryRange,
    n_pir: u64,
    block_bits: u64,
) -> Result<BlockLayout, StoreError> {
    let shift = block_shift(range, n_pir)?;
    if block_bits == 0 || block_bits % 8 != 0 {
        return Err(StoreError::Parameter(format!("block size {block_bits} is not a whole number of bytes")));
    }
    let capacity = (block_bits / 8) as usize;
    let mut contents: Vec<Vec<&StoredEntry>> = vec![Vec::new(); n_pir as usize];
    for entry in entries {
        let j = block_index(range, n_pir, entry.identifier)?;
        contents[j - 1].push(entry);
    }
    let mut blocks = Vec::with_capacity(n_pir as usize);
    for (i, members) in contents.iter_mut().enumerate() {
        members.sort_by_key(|e| e.identifier);
        let mut block = Vec::with_capacity(capacity);
        block.extend_from_slice(&(members.len() as u16).to_be_bytes());
        for entry in members.iter() {
            entry.encode_into(&mut block);
        }
        if block.len() > capacity || members.len() > u16::MAX as usize {
            return Err(StoreError::BlockOverflow {
                block: i + 1,
                needed_bits: block.len() as u64 * 8,
                capacity_bits: block_bits,
            });
        }
        block.resize(capacity, 0);
        blocks.push(block);
    }
    debug_assert!((1..=n_pir as usize).all(|j| {
        let (lo, hi) = sub_interval(range, shift, j);
        contents[j - 1].iter().all(|e| e.identifier >= lo && e.identifier <= hi)
    }));
    Ok(BlockLayout {
        range: *range,
        n_pir,
        block_bits,
        blocks,
    })
}

/// Inverse of the per-block encoding in [`pack_blocks`].
pub fn unpack_block(block: &[u8]) -> Result<Vec<StoredEntry>, StoreError> {
    let mut input = block;
    let count = take_u16(&mut input)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        entries.push(StoredEntry::decode_from(&mut input)?);
    }
    if input.iter().any(|&b| b != 0) {
        return Err(StoreError::Decode("non-zero bytes after the last entry".into()));
    }
    Ok(entries)
}

/// Rebuilds block bytes from a recovered integer.
pub fn block_from_value(value: &BigUint, block_bits: u64) -> Result<Vec<u8>, StoreError> {
    let width = (block_bits / 8) as usize;
    let bytes = value.to_bytes_be();
    if bytes.len() > width {
        return Err(StoreError::Decode(format!("value wider than a {block_bits}-bit block")));
    }
    let mut out = vec![0u8; width - bytes.len()];
    out.extend_from_slice(&bytes);
    Ok(out)
}

impl fmt::Display for StoredEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.identifier.to_hex(), self.name)?;
        for rrset in &self.rrsets {
            for record in &rrset.records {
                write!(f, " {:?}/{:?} ttl={} {}", rrset.rtype, rrset.rclass, record.ttl, hex(&record.data))?;
            }
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::form_range;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn id(v: u128) -> Identifier {
        Identifier::from_u128(v)
    }

    fn fixture(at: u128, name: &str, ttl: u32) -> StoredEntry {
        let record = ResourceRecord {
            name: name.into(),
            rtype: RecordType::A,
            rclass: RecordClass::In,
            ttl,
            data: vec![10, 0, 0, (at % 251) as u8],
        };
        let mut rrset = RRSet::new(vec![record], Vec::new()).unwrap();
        RecordSigner::default().sign_in_place(&mut rrset);
        StoredEntry::at(id(at), name, vec![rrset]).unwrap()
    }

    fn toy_store(bits: u32, ids: &[u128]) -> NameStore {
        let mut store = NameStore::new(IdSpace::new(bits).unwrap());
        for &i in ids {
            store.insert(fixture(i, &format!("n{i}.example"), 300)).unwrap();
        }
        store
    }

    #[test]
    fn rrset_ttl_is_the_minimum() {
        let mk = |ttl| ResourceRecord {
            name: "A.Example.".into(),
            rtype: RecordType::A,
            rclass: RecordClass::In,
            ttl,
            data: vec![1, 2, 3, 4],
        };
        let set = RRSet::new(vec![mk(600), mk(30), mk(90)], vec![]).unwrap();
        assert_eq!(set.ttl(), 30);
        assert_eq!(set.name(), "a.example");
        assert!(RRSet::new(vec![], vec![]).is_err());
        let mut other = mk(5);
        other.rtype = RecordType::Aaaa;
        assert!(RRSet::new(vec![mk(1), other], vec![]).is_err());
    }

    #[test]
    fn ingest_collapses_duplicates() {
        let (store, report) =
            NameStore::ingest_names("www.a.com\nwww.b.com\nWWW.A.COM.\n".as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(report.distinct, 2);
        assert_eq!(report.duplicates, 1);
        let (store, report) = NameStore::ingest_names("".as_bytes(), &IngestOptions::default()).unwrap();
        assert!(store.is_empty());
        assert_eq!(report, IngestReport::default());
        let (store, report) =
            NameStore::ingest_names("ok.com\nbad name\n\u{e9}.com\n".as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(report.skipped, 2);
    }

    #[test]
    fn ingest_takes_ttls_from_overrides() {
        let mut options = IngestOptions::default();
        options.ttl_overrides.insert("www.a.com".into(), 42);
        let (store, _) = NameStore::ingest_names("www.a.com\nwww.b.com\n".as_bytes(), &options).unwrap();
        let ttl = |n: &str| store.get(crate::ident::hash_name(n).unwrap()).unwrap().min_ttl().unwrap();
        assert_eq!(ttl("www.a.com"), 42);
        assert_eq!(ttl("www.b.com"), DEFAULT_TTL);
    }

    #[test]
    fn lookup_range_examples() {
        let space = IdSpace::new(10).unwrap();
        let store = toy_store(10, &[100, 660, 665, 700]);
        let range = form_range(id(665), 5, space).unwrap();
        let ids: Vec<u128> = store.lookup_range(&range).iter().map(|e| e.identifier().to_u128().unwrap()).collect();
        assert_eq!(ids, vec![660, 665]);
        assert!(store.lookup_range(&form_range(id(0), 5, space).unwrap()).is_empty());
    }

    #[test]
    fn lookup_range_matches_linear_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        let ids: Vec<u128> = (0..300).map(|_| rng.random_range(0..1 << 16)).collect();
        let store = toy_store(16, &ids);
        let space = store.space();
        for _ in 0..200 {
            let s = rng.random_range(0..=16);
            let range = form_range(id(rng.random_range(0..1 << 16)), s, space).unwrap();
            let expected: Vec<Identifier> = store.entries().map(|e| e.identifier()).filter(|i| range.contains(*i)).collect();
            let got: Vec<Identifier> = store.lookup_range(&range).iter().map(|e| e.identifier()).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn arc_counts_wrap() {
        let store = toy_store(10, &[5, 50, 500, 1000]);
        assert_eq!(store.count_in_arc(id(5), id(500)), 2);
        assert_eq!(store.count_in_arc(id(500), id(5)), 2);
        assert_eq!(store.count_in_arc(id(50), id(50)), 4);
    }

    #[test]
    fn block_index_examples() {
        let space24 = IdSpace::new(24).unwrap();
        let range = form_range(id(0x3b5a5c), 16, space24).unwrap();
        assert_eq!(range.start(), id(0x3b0000));
        assert_eq!(range.end(), id(0x3bffff));
        assert_eq!(block_index(&range, 2, id(0x3b5a5c)).unwrap(), 1);
        assert_eq!(block_index(&range, 2, id(0x3b7fff)).unwrap(), 1);
        assert_eq!(block_index(&range, 2, id(0x3b8000)).unwrap(), 2);

        let range = form_range(id(665), 5, IdSpace::new(10).unwrap()).unwrap();
        assert_eq!(block_index(&range, 8, id(665)).unwrap(), 7);
        for t in 640..=671u128 {
            assert_eq!(block_index(&range, 1, id(t)).unwrap(), 1);
            assert_eq!(block_index(&range, 8, id(t)).unwrap(), ((t - 640) / 4 + 1) as usize);
        }
        assert!(block_index(&range, 8, id(672)).is_err());
        assert!(block_index(&range, 3, id(665)).is_err());
        assert!(block_index(&range, 64, id(665)).is_err());
    }

    #[test]
    fn sub_intervals_tile_the_range() {
        let range = form_range(id(665), 5, IdSpace::new(10).unwrap()).unwrap();
        let layout = pack_blocks(&[], &range, 8, 256).unwrap();
        let mut next = 640u128;
        for j in 1..=8 {
            let (lo, hi) = layout.sub_interval(j);
            assert_eq!(lo, id(next));
            next = hi.to_u128().unwrap() + 1;
        }
        assert_eq!(next, 672);
        assert!(layout.blocks.iter().all(|b| b.iter().all(|&x| x == 0) && b.len() == 32));
    }

    #[test]
    fn first_block_holds_records_below_the_midpoint() {
        let store = toy_store(24, &[0x3b0102, 0x3b2000, 0x3b5a5c, 0x3b9000, 0x3bfff0]);
        let range = form_range(id(0x3b5a5c), 16, store.space()).unwrap();
        let entries = store.lookup_range(&range);
        let layout = pack_blocks(&entries, &range, 2, 4096).unwrap();
        let first = unpack_block(&layout.blocks[0]).unwrap();
        let ids: Vec<u128> = first.iter().map(|e| e.identifier().to_u128().unwrap()).collect();
        assert_eq!(ids, vec![0x3b0102, 0x3b2000, 0x3b5a5c]);
        assert_eq!(unpack_block(&layout.blocks[1]).unwrap().len(), 2);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let ids: Vec<u128> = (0..400).map(|_| rng.random_range(0..1 << 20)).collect();
        let store = toy_store(20, &ids);
        for _ in 0..50 {
            let range = form_range(id(rng.random_range(0..1 << 20)), 14, store.space()).unwrap();
            let entries = store.lookup_range(&range);
            let layout = pack_blocks(&entries, &range, 4, 8192).unwrap();
            let mut back = Vec::new();
            for (j, block) in layout.blocks.iter().enumerate() {
                let value = layout.block_value(j + 1);
                assert_eq!(&block_from_value(&value, 8192).unwrap(), block);
                back.extend(unpack_block(block).unwrap());
            }
            assert_eq!(back, entries);
        }
    }

    #[test]
    fn overflow_names_the_block() {
        let store = toy_store(10, &[640, 641, 642, 643, 660]);
        let range = form_range(id(665), 5, store.space()).unwrap();
        let entries = store.lookup_range(&range);
        match pack_blocks(&entries, &range, 8, 256) {
            Err(StoreError::BlockOverflow { block, capacity_bits, .. }) => {
                assert_eq!(block, 1);
                assert_eq!(capacity_bits, 256);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let (store, _) =
            NameStore::ingest_names("www.a.com\nwww.b.com\nwww.c.org\n".as_bytes(), &IngestOptions::default()).unwrap();
        let mut bytes = Vec::new();
        store.write_snapshot(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], SNAPSHOT_MAGIC);
        assert_eq!(NameStore::read_snapshot(bytes.as_slice()).unwrap(), store);
        bytes[0] = b'X';
        assert!(NameStore::read_snapshot(bytes.as_slice()).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let records = vec![
            TraceRecord { timestamp_seconds: 0.5, name: "www.a.com".into(), ttl_seconds: 60, response_bytes: 120 },
            TraceRecord { timestamp_seconds: 1.0, name: "www.b.com".into(), ttl_seconds: 3600, response_bytes: 98 },
        ];
        let mut bytes = Vec::new();
        write_trace(&mut bytes, &records).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(read_trace(bytes.as_slice()).unwrap(), records);
        assert_eq!(trace_ttls(&records)["www.a.com"], 60);
        let backwards = format!("{TRACE_HEADER}\n2,a.com,1,1\n1,b.com,1,1\n");
        assert!(read_trace(backwards.as_bytes()).is_err());
    }
}
