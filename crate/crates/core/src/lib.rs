//! Range-query name resolution over a DHT overlay, with optional
//! cPIR retrieval of a single block from the answered range.

pub mod analysis;
pub mod ident;
pub mod overlay;
pub mod pir;
pub mod resolver;
pub mod store;

pub use ident::{
    canonical_name, estimate_density, form_range, hash_name, range_size_exponent, update_density, DensityEstimate,
    IdError, IdSpace, Identifier, QueryRange, SmoothingWeight,
};
pub use overlay::{OverlayError, OverlayMetrics, QueryMode, Ring, RingConfig};
pub use pir::{PirError, PirQuery, PirResponse, PirSecret, PrimeTable, QueryGenerator};
pub use resolver::{verify_signatures, ClientConfig, ResolutionResult, ResolveError, Resolver, SignatureVerdict};
pub use store::{NameStore, RRSet, RecordSigner, RecordType, ResourceRecord, StoreError, StoredEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Pir(#[from] PirError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}
