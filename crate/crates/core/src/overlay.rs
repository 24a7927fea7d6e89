//! A deterministic, in-process Chord-style ring: successor ownership, finger
//! routing of range queries with splitting at arc boundaries, and whole-range
//! caching with min-TTL expiry.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::fixed_set_build;
use crate::ident::{
    estimate_density, form_range, hash_name, range_size_exponent, DensityEstimate, IdError, IdSpace, Identifier,
    QueryRange,
};
use crate::store::{NameStore, StoredEntry, TraceRecord};

pub const DEFAULT_NEGATIVE_TTL: u32 = 300;
pub const DEFAULT_HOP_DELAY_MS: f64 = 10.0;

/// Bytes of one forwarded range query: id, start, end, prime index, hops.
pub const QUERY_MESSAGE_BYTES: u64 = 8 + 20 + 20 + 4 + 1;
/// Fixed bytes of one sub-response before its entries.
pub const RESPONSE_HEADER_BYTES: u64 = 8 + 20 + 20 + 2;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("ring needs at least one node")]
    EmptyRing,
    #[error("query {query_id} exceeded the hop budget of {budget}")]
    HopBudget { query_id: u64, budget: u32 },
    #[error("responses for {range} do not cover it: {detail}")]
    PartialResponse { range: QueryRange, detail: String },
    #[error(transparent)]
    Id(#[from] IdError),
    #[error("parameter error: {0}")]
    Parameter(String),
}

#[derive(Clone, Debug)]
pub struct RingConfig {
    pub node_count: usize,
    pub seed: u64,
    pub negative_ttl: u32,
    pub cache_capacity: Option<usize>,
    pub hop_delay_ms: f64,
    /// Defaults to `2 * ceil(log2 node_count)`.
    pub max_hops: Option<u32>,
}

impl RingConfig {
    pub fn new(node_count: usize, seed: u64) -> Self {
        RingConfig {
            node_count,
            seed,
            negative_ttl: DEFAULT_NEGATIVE_TTL,
            cache_capacity: None,
            hop_delay_ms: DEFAULT_HOP_DELAY_MS,
            max_hops: None,
        }
    }
}

/// A cached range response.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub range: QueryRange,
    pub entries: Arc<[StoredEntry]>,
    pub expiry: f64,
}

/// Whole-range cache keyed by aligned range, with an optional LRU bound.
#[derive(Clone, Debug, Default)]
pub struct RangeCache {
    entries: HashMap<(Identifier, u32), (CacheEntry, u64)>,
    recency: BTreeMap<u64, (Identifier, u32)>,
    tick: u64,
    capacity: Option<usize>,
}

impl RangeCache {
    pub fn new(capacity: Option<usize>) -> Self {
        RangeCache {
            capacity,
            ..RangeCache::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A live entry whose range contains `[low, high]`. Aligned ranges only
    /// nest, so only the containing ranges at each size need probing.
    pub fn find(&self, low: Identifier, high: Identifier, now: f64, space: IdSpace) -> Option<&CacheEntry> {
        if self.entries.is_empty() {
            return None;
        }
        let first = (0..=space.bits()).find(|&s| low.shr(s) == high.shr(s))?;
        (first..=space.bits()).find_map(|s| {
            let start = low.and(Identifier::low_mask(s).not());
            self.entries
                .get(&(start, s))
                .map(|(entry, _)| entry)
                .filter(|entry| entry.expiry > now)
        })
    }

    /// Entries in `[low, high]` from a live containing range.
    pub fn lookup(&mut self, low: Identifier, high: Identifier, now: f64, space: IdSpace) -> Option<Vec<StoredEntry>> {
        let key = {
            let entry = self.find(low, high, now, space)?;
            (entry.range.start(), entry.range.size_exponent())
        };
        self.touch(key);
        let (entry, _) = &self.entries[&key];
        Some(
            entry
                .entries
                .iter()
                .filter(|e| e.identifier() >= low && e.identifier() <= high)
                .cloned()
                .collect(),
        )
    }

    fn touch(&mut self, key: (Identifier, u32)) {
        self.tick += 1;
        if let Some((_, stamp)) = self.entries.get_mut(&key) {
            self.recency.remove(stamp);
            *stamp = self.tick;
            self.recency.insert(self.tick, key);
        }
    }

    pub fn insert(&mut self, entry: CacheEntry, now: f64) {
        let key = (entry.range.start(), entry.range.size_exponent());
        self.tick += 1;
        if let Some((_, stamp)) = self.entries.insert(key, (entry, self.tick)) {
            self.recency.remove(&stamp);
        }
        self.recency.insert(self.tick, key);
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                // Expired entries go first, then the least recently used.
                let victim = self
                    .entries
                    .iter()
                    .filter(|(_, (e, _))| e.expiry <= now)
                    .map(|(k, (_, stamp))| (*stamp, *k))
                    .min()
                    .or_else(|| self.recency.iter().next().map(|(s, k)| (*s, *k)));
                let Some((stamp, k)) = victim else { break };
                self.recency.remove(&stamp);
                self.entries.remove(&k);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RingNode {
    pub id: Identifier,
    pub predecessor: Identifier,
    /// `fingers[k]` indexes the successor of `id + 2^k`.
    pub fingers: Vec<usize>,
    pub cache: RangeCache,
}

impl RingNode {
    /// Whether `id` falls in this node's arc `(predecessor, id]`.
    pub fn owns(&self, id: Identifier) -> bool {
        in_arc(self.predecessor, self.id, id)
    }
}

/// Membership in the clockwise half-open arc `(from, to]`; the full circle
/// when the endpoints coincide.
pub fn in_arc(from: Identifier, to: Identifier, x: Identifier) -> bool {
    if from < to {
        x > from && x <= to
    } else {
        x > from || x <= to
    }
}

/// Membership in the open arc `(from, to)`.
fn in_open_arc(from: Identifier, to: Identifier, x: Identifier) -> bool {
    if from < to {
        x > from && x < to
    } else {
        x > from || x < to
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeQueryMsg {
    pub query_id: u64,
    pub range: QueryRange,
    pub prime_end_index: Option<u32>,
    pub origin: usize,
    pub hop_count: u32,
}

/// One piece of a routed answer.
#[derive(Clone, Debug, PartialEq)]
pub struct SubResponse {
    pub responder: usize,
    pub low: Identifier,
    pub high: Identifier,
    pub entries: Vec<StoredEntry>,
    pub from_cache: bool,
    /// Hops from the origin to the responder, counted along the path.
    pub hops: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RouteOutcome {
    pub responses: Vec<SubResponse>,
    pub messages: u64,
    pub overlay_bytes: u64,
}

impl RouteOutcome {
    /// Distinct responders less one; a wrapping arc may answer two pieces.
    pub fn splits(&self) -> usize {
        let responders: std::collections::BTreeSet<usize> = self.responses.iter().map(|r| r.responder).collect();
        responders.len().saturating_sub(1)
    }

    pub fn max_hops(&self) -> u32 {
        self.responses.iter().map(|r| r.hops).max().unwrap_or(0)
    }
}

/// What the local node returns to its client.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub range: QueryRange,
    pub entries: Vec<StoredEntry>,
    /// Answered without reaching any home node.
    pub cache_hit: bool,
    pub local_hit: bool,
    pub messages: u64,
    pub overlay_bytes: u64,
    pub splits: usize,
    pub hops: u32,
    pub responders: Vec<(usize, Identifier, Identifier)>,
}

pub struct Ring {
    space: IdSpace,
    nodes: Vec<RingNode>,
    store: Arc<NameStore>,
    negative_ttl: u32,
    hop_delay_ms: f64,
    max_hops: u32,
    next_query_id: u64,
}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ring")
            .field("space", &self.space)
            .field("nodes", &self.nodes.len())
            .field("entries", &self.store.len())
            .finish()
    }
}

fn random_identifier<R: RngCore + ?Sized>(rng: &mut R, space: IdSpace) -> Identifier {
    let mut bytes = [0u8; 20];
    rng.fill_bytes(&mut bytes);
    Identifier::from_be_bytes(bytes).and(space.max_id())
}

impl Ring {
    /// Random distinct node identifiers drawn from the seed.
    pub fn build(config: &RingConfig, store: Arc<NameStore>) -> Result<Self, OverlayError> {
        let space = store.space();
        if config.node_count == 0 {
            return Err(OverlayError::EmptyRing);
        }
        if space.bits() < 64 && config.node_count as u64 > 1u64 << space.bits() {
            return Err(OverlayError::Parameter("more nodes than identifiers".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut ids = std::collections::BTreeSet::new();
        while ids.len() < config.node_count {
            ids.insert(random_identifier(&mut rng, space));
        }
        Self::with_ids(config, ids.into_iter().collect(), store)
    }

    /// A ring over explicit node identifiers.
    pub fn with_ids(config: &RingConfig, mut ids: Vec<Identifier>, store: Arc<NameStore>) -> Result<Self, OverlayError> {
        let space = store.space();
        if ids.is_empty() {
            return Err(OverlayError::EmptyRing);
        }
        ids.sort();
        ids.dedup();
        if let Some(bad) = ids.iter().find(|id| !space.contains(**id)) {
            return Err(OverlayError::Parameter(format!("node {bad} outside the space")));
        }
        let n = ids.len();
        let successor = |target: Identifier| ids.partition_point(|id| *id < target) % n;
        let nodes = (0..n)
            .map(|i| {
                let id = ids[i];
                let fingers = (0..space.bits())
                    .map(|k| successor(space.add(id, Identifier::pow2(k))))
                    .collect();
                RingNode {
                    id,
                    predecessor: ids[(i + n - 1) % n],
                    fingers,
                    cache: RangeCache::new(config.cache_capacity),
                }
            })
            .collect();
        let log = usize::BITS - (n - 1).leading_zeros();
        Ok(Ring {
            space,
            nodes,
            store,
            negative_ttl: config.negative_ttl,
            hop_delay_ms: config.hop_delay_ms,
            max_hops: config.max_hops.unwrap_or((2 * log).max(1)),
            next_query_id: 0,
        })
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn store(&self) -> &NameStore {
        &self.store
    }

    pub fn nodes(&self) -> &[RingNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn hop_delay_ms(&self) -> f64 {
        self.hop_delay_ms
    }

    pub fn node_index(&self, id: Identifier) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.id.cmp(&id)).ok()
    }

    /// The successor of `id`: first node at or clockwise after it.
    pub fn assign_home(&self, id: Identifier) -> usize {
        self.nodes.partition_point(|n| n.id < id) % self.nodes.len()
    }

    fn successor_of(&self, node: usize) -> usize {
        (node + 1) % self.nodes.len()
    }

    /// Density of non-empty identifiers over a node's arc.
    pub fn node_density(&self, node: usize) -> Result<DensityEstimate, IdError> {
        let n = &self.nodes[node];
        let count = self.store.count_in_arc(n.predecessor, n.id);
        estimate_density(count, &self.space.arc_len(n.predecessor, n.id))
    }

    /// Indices of nodes whose arcs meet `[low, high]`, in clockwise order.
    pub fn homes_intersecting(&self, low: Identifier, high: Identifier) -> Vec<usize> {
        let first = self.assign_home(low);
        let mut out = vec![first];
        let mut current = first;
        while self.nodes[current].id < high && self.nodes[current].id >= low {
            current = self.successor_of(current);
            if current == first {
                break;
            }
            out.push(current);
        }
        out
    }

    /// Closest finger strictly between `node` and `target`.
    fn closest_preceding(&self, node: usize, target: Identifier) -> usize {
        let me = self.nodes[node].id;
        self.nodes[node]
            .fingers
            .iter()
            .rev()
            .copied()
            .find(|&f| in_open_arc(me, target, self.nodes[f].id))
            .unwrap_or_else(|| self.successor_of(node))
    }

    fn entry_bytes(entries: &[StoredEntry]) -> u64 {
        entries.iter().map(|e| e.encoded_len() as u64).sum()
    }

    /// Routes `msg` from its origin. Each step checks the current node's
    /// cache, then answers the part of the range in its arc, forwarding any
    /// remainder to the successor as a fresh sub-query; otherwise the query
    /// moves along the closest preceding finger.
    pub fn route_range_query(&mut self, msg: &RangeQueryMsg, now: f64) -> Result<RouteOutcome, OverlayError> {
        let space = self.space;
        let mut outcome = RouteOutcome::default();
        // (node, low, high, hops for this sub-query, hops from origin)
        let mut pending = vec![(msg.origin, msg.range.start(), msg.range.end(), msg.hop_count, msg.hop_count)];
        while let Some((node, low, high, hops, path)) = pending.pop() {
            if hops > self.max_hops {
                return Err(OverlayError::HopBudget {
                    query_id: msg.query_id,
                    budget: self.max_hops,
                });
            }
            if let Some(entries) = self.nodes[node].cache.lookup(low, high, now, space) {
                outcome.messages += u64::from(node != msg.origin);
                outcome.overlay_bytes += if node != msg.origin {
                    RESPONSE_HEADER_BYTES + Self::entry_bytes(&entries)
                } else {
                    0
                };
                outcome.responses.push(SubResponse {
                    responder: node,
                    low,
                    high,
                    entries,
                    from_cache: true,
                    hops: path,
                });
                continue;
            }
            let current = &self.nodes[node];
            if current.owns(low) {
                // Ranges never wrap, so a wrapping arc covers everything above low.
                let local_high = if current.id >= low { current.id.min(high) } else { high };
                let entries: Vec<StoredEntry> = self.store.between(low, local_high).cloned().collect();
                if node != msg.origin {
                    outcome.messages += 1;
                    outcome.overlay_bytes += RESPONSE_HEADER_BYTES + Self::entry_bytes(&entries);
                }
                outcome.responses.push(SubResponse {
                    responder: node,
                    low,
                    high: local_high,
                    entries,
                    from_cache: false,
                    hops: path,
                });
                if local_high < high {
                    let next = self.successor_of(node);
                    outcome.messages += 1;
                    outcome.overlay_bytes += QUERY_MESSAGE_BYTES;
                    pending.push((next, local_high.wrapping_add(Identifier::from_u128(1)), high, 1, path + 1));
                }
                continue;
            }
            let next = if in_arc(current.id, self.nodes[self.successor_of(node)].id, low) {
                self.successor_of(node)
            } else {
                self.closest_preceding(node, low)
            };
            outcome.messages += 1;
            outcome.overlay_bytes += QUERY_MESSAGE_BYTES;
            pending.push((next, low, high, hops + 1, path + 1));
        }
        outcome.responses.sort_by_key(|r| r.low);
        Ok(outcome)
    }

    /// Reads the origin's cache without routing.
    pub fn cache_lookup(&mut self, node: usize, range: &QueryRange, now: f64) -> Option<Vec<StoredEntry>> {
        let space = self.space;
        self.nodes[node].cache.lookup(range.start(), range.end(), now, space)
    }

    /// Merges sub-responses, checks they tile the range, and caches the whole
    /// range at the origin until the smallest TTL among its records lapses.
    pub fn local_aggregate(
        &mut self,
        origin: usize,
        range: &QueryRange,
        responses: &[SubResponse],
        now: f64,
    ) -> Result<Vec<StoredEntry>, OverlayError> {
        let mut expected = Some(range.start());
        let mut merged = Vec::new();
        for r in responses {
            if Some(r.low) != expected {
                return Err(OverlayError::PartialResponse {
                    range: *range,
                    detail: format!("gap or overlap at {}", r.low),
                });
            }
            merged.extend(r.entries.iter().cloned());
            expected = r.high.checked_add(Identifier::from_u128(1));
            if r.high == range.end() {
                expected = None;
            }
        }
        if expected.is_some() {
            return Err(OverlayError::PartialResponse {
                range: *range,
                detail: "responses stop short of the range end".into(),
            });
        }
        let ttl = merged
            .iter()
            .filter_map(StoredEntry::min_ttl)
            .min()
            .unwrap_or(self.negative_ttl);
        let entry = CacheEntry {
            range: *range,
            entries: merged.clone().into(),
            expiry: now + f64::from(ttl),
        };
        self.nodes[origin].cache.insert(entry, now);
        Ok(merged)
    }

    /// Local cache, then overlay routing and aggregation.
    pub fn query(&mut self, origin: usize, range: QueryRange, prime_end_index: Option<u32>, now: f64) -> Result<QueryOutcome, OverlayError> {
        if let Some(entries) = self.cache_lookup(origin, &range, now) {
            return Ok(QueryOutcome {
                range,
                entries,
                cache_hit: true,
                local_hit: true,
                messages: 0,
                overlay_bytes: 0,
                splits: 0,
                hops: 0,
                responders: vec![(origin, range.start(), range.end())],
            });
        }
        self.next_query_id += 1;
        let msg = RangeQueryMsg {
            query_id: self.next_query_id,
            range,
            prime_end_index,
            origin,
            hop_count: 0,
        };
        let route = self.route_range_query(&msg, now)?;
        let entries = self.local_aggregate(origin, &range, &route.responses, now)?;
        Ok(QueryOutcome {
            range,
            entries,
            cache_hit: route.responses.iter().all(|r| r.from_cache),
            local_hit: false,
            messages: route.messages,
            overlay_bytes: route.overlay_bytes,
            splits: route.splits(),
            hops: route.max_hops(),
            responders: route.responses.iter().map(|r| (r.responder, r.low, r.high)).collect(),
        })
    }

    pub fn clear_caches(&mut self) {
        for node in &mut self.nodes {
            node.cache = RangeCache::new(node.cache.capacity);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "m")]
pub enum QueryMode {
    /// The exact identifier only.
    Single,
    /// The aligned range sized for `m` non-empty identifiers.
    Range(u64),
    /// The target plus `m - 1` fresh random identifiers, each queried singly.
    RandomSet(u64),
    /// The target plus `m - 1` names fixed per target by a keyed function.
    FixedSet(u64),
}

impl QueryMode {
    pub fn label(&self) -> String {
        match self {
            QueryMode::Single => "single".into(),
            QueryMode::Range(m) => format!("range-{m}"),
            QueryMode::RandomSet(m) => format!("random-set-{m}"),
            QueryMode::FixedSet(m) => format!("fixed-set-{m}"),
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    /// `single`, `range:M`, `random-set:M` or `fixed-set:M`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, m) = match s.split_once(':') {
            Some((k, m)) => (k, Some(m.parse::<u64>().map_err(|e| format!("bad m in {s:?}: {e}"))?)),
            None => (s, None),
        };
        let need = |m: Option<u64>| match m {
            Some(m) if m >= 1 => Ok(m),
            _ => Err(format!("mode {kind:?} needs m >= 1, e.g. {kind}:128")),
        };
        match kind {
            "single" => Ok(QueryMode::Single),
            "range" => Ok(QueryMode::Range(need(m)?)),
            "random-set" => Ok(QueryMode::RandomSet(need(m)?)),
            "fixed-set" => Ok(QueryMode::FixedSet(need(m)?)),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "theta")]
pub enum Popularity {
    Uniform,
    Zipf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorkload {
    pub popularity: Popularity,
    /// Queries per second across all clients.
    pub rate: f64,
    pub duration: f64,
    pub clients: usize,
    pub seed: u64,
}

/// One client query at a point in simulated time.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadEvent {
    pub time: f64,
    pub client: usize,
    pub name: String,
}

impl SyntheticWorkload {
    /// Poisson arrivals over `names`, ranked by position for Zipf.
    pub fn events(&self, names: &[String]) -> Result<Vec<WorkloadEvent>, OverlayError> {
        if names.is_empty() || self.clients == 0 || !(self.rate > 0.0) || !(self.duration >= 0.0) {
            return Err(OverlayError::Parameter("workload needs names, clients and a positive rate".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let zipf = match self.popularity {
            Popularity::Zipf(theta) => Some(
                Zipf::new(names.len() as f64, theta).map_err(|e| OverlayError::Parameter(format!("zipf: {e}")))?,
            ),
            Popularity::Uniform => None,
        };
        let gap = rand_distr::Exp::new(self.rate).map_err(|e| OverlayError::Parameter(format!("rate: {e}")))?;
        let mut events = Vec::new();
        let mut time = 0.0;
        loop {
            time += gap.sample(&mut rng);
            if time > self.duration {
                break;
            }
            let index = match &zipf {
                Some(z) => z.sample(&mut rng) as usize - 1,
                None => rng.random_range(0..names.len()),
            };
            events.push(WorkloadEvent {
                time,
                client: rng.random_range(0..self.clients),
                name: names[index].clone(),
            });
        }
        Ok(events)
    }
}

/// Trace lines as workload events, clients assigned from the seed.
pub fn trace_events(records: &[TraceRecord], clients: usize, seed: u64) -> Vec<WorkloadEvent> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| WorkloadEvent {
            time: r.timestamp_seconds,
            client: rng.random_range(0..clients.max(1)),
            name: r.name.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlayMetrics {
    pub mode: String,
    pub queries: u64,
    pub messages_sent: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub hops_total: u64,
    pub hops_max: u32,
    pub splits_total: u64,
    pub splits_max: usize,
    /// Client-to-local-node bytes, both directions.
    pub client_bytes: u64,
    /// Node-to-node bytes, both directions.
    pub overlay_bytes: u64,
    pub delay_ms_total: f64,
}

impl OverlayMetrics {
    pub fn hit_ratio(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.queries as f64
        }
    }

    pub fn mean_hops(&self) -> f64 {
        self.hops_total as f64 / self.queries.max(1) as f64
    }

    pub fn split_ratio(&self) -> f64 {
        self.splits_total as f64 / self.queries.max(1) as f64
    }

    pub fn mean_delay_ms(&self) -> f64 {
        self.delay_ms_total / self.queries.max(1) as f64
    }

    /// One JSON record per series, after a header naming the fields.
    pub fn write_json_lines<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_metrics(std::slice::from_ref(self), out)
    }

    fn write_records<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let series: [(&str, serde_json::Value); 14] = [
            ("queries", self.queries.into()),
            ("messages_sent", self.messages_sent.into()),
            ("cache_hits", self.cache_hits.into()),
            ("cache_misses", self.cache_misses.into()),
            ("hit_ratio", self.hit_ratio().into()),
            ("hops_total", self.hops_total.into()),
            ("hops_max", self.hops_max.into()),
            ("mean_hops", self.mean_hops().into()),
            ("splits_total", self.splits_total.into()),
            ("splits_max", self.splits_max.into()),
            ("split_ratio", self.split_ratio().into()),
            ("client_bytes", self.client_bytes.into()),
            ("overlay_bytes", self.overlay_bytes.into()),
            ("mean_delay_ms", self.mean_delay_ms().into()),
        ];
        for (name, value) in series {
            writeln!(out, "{}", serde_json::json!({"mode": self.mode, "series": name, "value": value}))?;
        }
        Ok(())
    }
}

/// Several runs under a single header line.
pub fn write_metrics<W: Write>(runs: &[OverlayMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::json!({"format": "ppdns-metrics", "version": 1, "fields": ["mode", "series", "value"]}))?;
    for run in runs {
        run.write_records(&mut out)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ClientParams {
    pub mode: QueryMode,
    /// Clients attach to this many distinct local nodes.
    pub local_nodes: usize,
    pub seed: u64,
}

/// Replays `events` against the ring and tallies the abstract cost metrics.
/// Range clients size their ranges from their local node's arc density.
pub fn run_workload(ring: &mut Ring, events: &[WorkloadEvent], params: &ClientParams) -> Result<OverlayMetrics, OverlayError> {
    if events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(OverlayError::Parameter("workload timestamps must be nondecreasing".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut locals: Vec<usize> = (0..ring.len()).collect();
    locals.shuffle(&mut rng);
    locals.truncate(params.local_nodes.clamp(1, ring.len()));

    let pool: Vec<Identifier> = ring.store().identifiers().collect();
    let mut exponents: HashMap<usize, u32> = HashMap::new();
    let mut metrics = OverlayMetrics {
        mode: params.mode.label(),
        ..OverlayMetrics::default()
    };
    let space = ring.space();
    let delay = ring.hop_delay_ms();
    for event in events {
        let origin = locals[event.client % locals.len()];
        let target = hash_name(&event.name)?.and(space.max_id());
        let lookups: Vec<QueryRange> = match params.mode {
            QueryMode::Single => vec![form_range(target, 0, space)?],
            QueryMode::Range(m) => {
                let s = match exponents.get(&origin) {
                    Some(&s) => s,
                    None => {
                        let s = ring
                            .node_density(origin)
                            .map(|rho| range_size_exponent(m, &rho).min(space.bits()))
                            .unwrap_or(space.bits());
                        exponents.insert(origin, s);
                        s
                    }
                };
                vec![form_range(target, s, space)?]
            }
            QueryMode::RandomSet(m) | QueryMode::FixedSet(m) => {
                let decoys = match params.mode {
                    QueryMode::FixedSet(_) => fixed_members(&pool, target, m, params)?,
                    _ => (1..m).map(|_| random_identifier(&mut rng, space)).collect(),
                };
                std::iter::once(target)
                    .chain(decoys)
                    .map(|id| form_range(id, 0, space))
                    .collect::<Result<_, _>>()?
            }
        };
        let mut hit = true;
        let mut worst_hops = 0;
        for range in lookups {
            let outcome = ring.query(origin, range, None, event.time)?;
            hit &= outcome.cache_hit;
            metrics.messages_sent += outcome.messages;
            metrics.overlay_bytes += outcome.overlay_bytes;
            metrics.hops_total += u64::from(outcome.hops);
            metrics.hops_max = metrics.hops_max.max(outcome.hops);
            metrics.splits_total += outcome.splits as u64;
            metrics.splits_max = metrics.splits_max.max(outcome.splits);
            metrics.client_bytes += QUERY_MESSAGE_BYTES
                + RESPONSE_HEADER_BYTES
                + outcome.entries.iter().map(|e| e.encoded_len() as u64).sum::<u64>();
            worst_hops = worst_hops.max(outcome.hops);
        }
        // Query out along the path and one direct reply back.
        metrics.delay_ms_total += if worst_hops == 0 { 0.0 } else { f64::from(worst_hops + 1) * delay };
        metrics.queries += 1;
        if hit {
            metrics.cache_hits += 1;
        } else {
            metrics.cache_misses += 1;
        }
    }
    Ok(metrics)
}

/// Decoys fixed per target by the client's key, drawn from stored names.
fn fixed_members(pool: &[Identifier], target: Identifier, m: u64, params: &ClientParams) -> Result<Vec<Identifier>, OverlayError> {
    let m = m as usize;
    if m <= 1 {
        return Ok(Vec::new());
    }
    let position = pool.binary_search(&target);
    // A target outside the pool stands in for the last slot of a virtual pool.
    let (size, index) = match position {
        Ok(i) => (pool.len(), i),
        Err(_) => (pool.len() + 1, pool.len()),
    };
    let members = fixed_set_build(params.seed, &target.to_be_bytes(), index, m, size)
        .map_err(|e| OverlayError::Parameter(e.to_string()))?;
    Ok(members
        .into_iter()
        .filter(|&i| i != index)
        .map(|i| pool[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::IdSpace;
    use crate::store::{RRSet, RecordClass, RecordSigner, RecordType, ResourceRecord};

    fn id(v: u128) -> Identifier {
        Identifier::from_u128(v)
    }

    fn entry(at: u128, ttl: u32) -> StoredEntry {
        let name = format!("n{at}.example");
        let record = ResourceRecord {
            name: name.clone(),
            rtype: RecordType::A,
            rclass: RecordClass::In,
            ttl,
            data: vec![1, 2, 3, 4],
        };
        let mut rrset = RRSet::new(vec![record], vec![]).unwrap();
        RecordSigner::default().sign_in_place(&mut rrset);
        StoredEntry::at(id(at), &name, vec![rrset]).unwrap()
    }

    fn toy_store(bits: u32, ids: &[(u128, u32)]) -> Arc<NameStore> {
        let mut store = NameStore::new(IdSpace::new(bits).unwrap());
        for &(i, ttl) in ids {
            store.insert(entry(i, ttl)).unwrap();
        }
        Arc::new(store)
    }

    fn example_ring(store: Arc<NameStore>) -> Ring {
        let ids = [50u128, 200, 500, 660, 800, 900].map(id).to_vec();
        Ring::with_ids(&RingConfig::new(6, 0), ids, store).unwrap()
    }

    #[test]
    fn single_node_owns_everything() {
        let store = toy_store(10, &[(3, 60), (1000, 60)]);
        let ring = Ring::build(&RingConfig::new(1, 7), store).unwrap();
        for x in [0u128, 3, 512, 1023] {
            assert_eq!(ring.assign_home(id(x)), 0);
            assert!(ring.nodes()[0].owns(id(x)));
        }
    }

    #[test]
    fn homes_match_linear_successor_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let ids: Vec<(u128, u32)> = (0..500).map(|_| (rng.random_range(0..1 << 16), 60)).collect();
        let store = toy_store(16, &ids);
        let ring = Ring::build(&RingConfig::new(37, 41), store.clone()).unwrap();
        assert_eq!(ring.len(), 37);
        for e in store.entries() {
            let x = e.identifier();
            let expected = ring.nodes().iter().position(|n| n.id >= x).unwrap_or(0);
            assert_eq!(ring.assign_home(x), expected);
            assert_eq!(ring.nodes().iter().filter(|n| n.owns(x)).count(), 1);
        }
        let again = Ring::build(&RingConfig::new(37, 41), store).unwrap();
        assert!(ring.nodes().iter().zip(again.nodes()).all(|(a, b)| a.id == b.id));
    }

    #[test]
    fn fingers_point_at_successors() {
        let ring = example_ring(toy_store(10, &[]));
        let node = &ring.nodes()[1];
        assert_eq!(node.id, id(200));
        let expected = [500, 500, 500, 500, 500, 500, 500, 500, 500, 800];
        for (k, &want) in expected.iter().enumerate() {
            assert_eq!(ring.nodes()[node.fingers[k]].id, id(want), "finger {k}");
        }
    }

    #[test]
    fn worked_split_example() {
        let store = toy_store(10, &[(645, 60), (660, 60), (665, 60), (700, 60)]);
        let mut ring = example_ring(store);
        let range = form_range(id(665), 5, ring.space()).unwrap();
        let origin = ring.node_index(id(200)).unwrap();
        let msg = RangeQueryMsg { query_id: 1, range, prime_end_index: None, origin, hop_count: 0 };
        let outcome = ring.route_range_query(&msg, 0.0).unwrap();
        let pieces: Vec<(u128, u128, u128)> = outcome
            .responses
            .iter()
            .map(|r| (ring.nodes()[r.responder].id.to_u128().unwrap(), r.low.to_u128().unwrap(), r.high.to_u128().unwrap()))
            .collect();
        assert_eq!(pieces, vec![(660, 640, 660), (800, 661, 671)]);
        assert_eq!(outcome.splits(), 1);
        assert_eq!(outcome.responses[0].hops, 2);
        // 200 -> 500 -> 660, 660 -> 800, plus one reply from each responder.
        assert_eq!(outcome.messages, 5);
        let merged = ring.local_aggregate(origin, &range, &outcome.responses, 0.0).unwrap();
        let ids: Vec<u128> = merged.iter().map(|e| e.identifier().to_u128().unwrap()).collect();
        assert_eq!(ids, vec![645, 660, 665]);
    }

    #[test]
    fn range_inside_one_arc_does_not_split() {
        let mut ring = example_ring(toy_store(10, &[(300, 60)]));
        let range = form_range(id(300), 5, ring.space()).unwrap();
        let outcome = ring.query(0, range, None, 0.0).unwrap();
        assert_eq!(outcome.splits, 0);
        assert_eq!(outcome.responders.len(), 1);
        assert_eq!(ring.nodes()[outcome.responders[0].0].id, id(500));
    }

    #[test]
    fn wrapping_arc_answers_top_and_bottom() {
        let mut ring = example_ring(toy_store(10, &[(10, 60), (1000, 60)]));
        let top = form_range(id(1000), 5, ring.space()).unwrap();
        let outcome = ring.query(2, top, None, 0.0).unwrap();
        assert_eq!(ring.nodes()[outcome.responders[0].0].id, id(50));
        assert_eq!(outcome.entries.len(), 1);
        let bottom = form_range(id(10), 6, ring.space()).unwrap();
        let outcome = ring.query(2, bottom, None, 0.0).unwrap();
        assert_eq!(outcome.splits, 1);
        assert_eq!(outcome.entries.len(), 1);
    }

    #[test]
    fn cache_hits_expire_and_nest() {
        let mut ring = example_ring(toy_store(10, &[(645, 60), (665, 30)]));
        let range = form_range(id(665), 5, ring.space()).unwrap();
        let first = ring.query(0, range, None, 0.0).unwrap();
        assert!(!first.cache_hit);
        let again = ring.query(0, range, None, 10.0).unwrap();
        assert!(again.cache_hit && again.local_hit);
        assert_eq!(again.entries, first.entries);
        let inner = form_range(id(665), 2, ring.space()).unwrap();
        let hit = ring.query(0, inner, None, 20.0).unwrap();
        assert!(hit.cache_hit);
        assert_eq!(hit.entries.len(), 1);
        // Expiry is now + min TTL = 30.
        let late = ring.query(0, range, None, 30.0).unwrap();
        assert!(!late.cache_hit);
        // A larger range is only partly covered by anything cached.
        let outer = form_range(id(665), 7, ring.space()).unwrap();
        assert!(ring.cache_lookup(0, &outer, 31.0).is_none());
    }

    #[test]
    fn empty_ranges_use_the_negative_ttl() {
        let mut ring = example_ring(toy_store(10, &[]));
        let range = form_range(id(100), 4, ring.space()).unwrap();
        ring.query(3, range, None, 0.0).unwrap();
        assert!(ring.cache_lookup(3, &range, 299.0).is_some());
        assert!(ring.cache_lookup(3, &range, 300.0).is_none());
    }

    #[test]
    fn en_route_cache_answers_for_other_origins() {
        let mut ring = example_ring(toy_store(10, &[(645, 600)]));
        let range = form_range(id(645), 5, ring.space()).unwrap();
        // Node 500 caches the range as a local node.
        let n500 = ring.node_index(id(500)).unwrap();
        ring.query(n500, range, None, 0.0).unwrap();
        let n200 = ring.node_index(id(200)).unwrap();
        let outcome = ring.query(n200, range, None, 1.0).unwrap();
        assert!(outcome.cache_hit && !outcome.local_hit);
        assert_eq!(outcome.entries.len(), 1);
    }

    #[test]
    fn aggregate_rejects_gaps() {
        let mut ring = example_ring(toy_store(10, &[]));
        let range = form_range(id(665), 5, ring.space()).unwrap();
        let piece = SubResponse { responder: 3, low: id(640), high: id(660), entries: vec![], from_cache: false, hops: 1 };
        assert!(matches!(
            ring.local_aggregate(0, &range, &[piece], 0.0),
            Err(OverlayError::PartialResponse { .. })
        ));
    }

    #[test]
    fn lru_bound_evicts_oldest() {
        let space = IdSpace::new(10).unwrap();
        let mut cache = RangeCache::new(Some(2));
        for (i, start) in [0u128, 32, 64].iter().enumerate() {
            let range = form_range(id(*start), 5, space).unwrap();
            cache.insert(CacheEntry { range, entries: Vec::new().into(), expiry: 100.0 }, i as f64);
        }
        assert_eq!(cache.len(), 2);
        assert!(cache.find(id(0), id(31), 5.0, space).is_none());
        assert!(cache.find(id(64), id(95), 5.0, space).is_some());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("single".parse::<QueryMode>().unwrap(), QueryMode::Single);
        assert_eq!("range:128".parse::<QueryMode>().unwrap(), QueryMode::Range(128));
        assert_eq!("random-set:4".parse::<QueryMode>().unwrap(), QueryMode::RandomSet(4));
        assert!("range".parse::<QueryMode>().is_err());
        assert!("range:0".parse::<QueryMode>().is_err());
        assert!("bogus:3".parse::<QueryMode>().is_err());
    }

    #[test]
    fn repeated_name_converges_to_hits() {
        let names: Vec<String> = (0..200).map(|i| format!("www.site{i}.com")).collect();
        let text = names.join("\n");
        let (store, _) = NameStore::ingest_names(text.as_bytes(), &Default::default()).unwrap();
        let mut ring = Ring::build(&RingConfig::new(8, 3), Arc::new(store)).unwrap();
        let events: Vec<WorkloadEvent> = (0..100)
            .map(|i| WorkloadEvent { time: i as f64, client: 0, name: names[7].clone() })
            .collect();
        let params = ClientParams { mode: QueryMode::Range(16), local_nodes: 1, seed: 1 };
        let metrics = run_workload(&mut ring, &events, &params).unwrap();
        assert_eq!(metrics.cache_misses, 1);
        assert_eq!(metrics.cache_hits, 99);
        assert_eq!(metrics.cache_hits + metrics.cache_misses, metrics.queries);
    }

    #[test]
    fn workloads_are_deterministic() {
        let names: Vec<String> = (0..500).map(|i| format!("www.site{i}.com")).collect();
        let (store, _) = NameStore::ingest_names(names.join("\n").as_bytes(), &Default::default()).unwrap();
        let store = Arc::new(store);
        let workload = SyntheticWorkload { popularity: Popularity::Zipf(1.0), rate: 5.0, duration: 200.0, clients: 4, seed: 9 };
        let events = workload.events(&names).unwrap();
        assert!(events.windows(2).all(|w| w[0].time <= w[1].time));
        let run = || {
            let mut ring = Ring::build(&RingConfig::new(16, 5), store.clone()).unwrap();
            let params = ClientParams { mode: QueryMode::Range(8), local_nodes: 2, seed: 4 };
            let mut out = Vec::new();
            run_workload(&mut ring, &events, &params).unwrap().write_json_lines(&mut out).unwrap();
            out
        };
        assert_eq!(run(), run());
    }
}
