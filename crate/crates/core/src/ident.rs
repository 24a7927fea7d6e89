//! The circular identifier space shared by names and overlay nodes.
//!
//! Names hash (SHA-1) into `[0, 2^160)`. A client turns the identifier of the
//! name it wants into an aligned power-of-two range whose size follows from
//! the security parameter `m` and the density estimate `rho`. Aligned ranges
//! nest or are disjoint, which is what makes repeated or cross-client queries
//! for the same name indistinguishable.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

/// Bit width of the SHA-1 identifier space.
pub const ID_BITS: u32 = 160;

/// Longest accepted domain name, in bytes.
pub const MAX_NAME_LEN: usize = 255;
pub const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdError {
    #[error("invalid name {name:?}: {reason}")]
    InvalidName { name: String, reason: &'static str },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("density is undefined for a span with no non-empty identifiers")]
    EmptyStore,
}

/// A point in the identifier space, stored as a 160-bit unsigned integer.
///
/// The derived ordering compares the high word first, so it is numeric order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Identifier {
    hi: u32,
    lo: u128,
}

impl Identifier {
    pub const ZERO: Identifier = Identifier { hi: 0, lo: 0 };
    pub const MAX: Identifier = Identifier {
        hi: u32::MAX,
        lo: u128::MAX,
    };

    pub const fn from_u128(value: u128) -> Self {
        Identifier { hi: 0, lo: value }
    }

    pub fn from_be_bytes(bytes: [u8; 20]) -> Self {
        let mut hi = [0u8; 4];
        let mut lo = [0u8; 16];
        hi.copy_from_slice(&bytes[..4]);
        lo.copy_from_slice(&bytes[4..]);
        Identifier {
            hi: u32::from_be_bytes(hi),
            lo: u128::from_be_bytes(lo),
        }
    }

    pub fn to_be_bytes(self) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[..4].copy_from_slice(&self.hi.to_be_bytes());
        out[4..].copy_from_slice(&self.lo.to_be_bytes());
        out
    }

    /// Returns `None` unless `value < 2^160`.
    pub fn from_biguint(value: &BigUint) -> Option<Self> {
        if value.bits() > u64::from(ID_BITS) {
            return None;
        }
        let bytes = value.to_bytes_be();
        let mut buf = [0u8; 20];
        buf[20 - bytes.len()..].copy_from_slice(&bytes);
        Some(Self::from_be_bytes(buf))
    }

    pub fn to_biguint(self) -> BigUint {
        BigUint::from_bytes_be(&self.to_be_bytes())
    }

    /// The value as `u128` when it fits.
    pub fn to_u128(self) -> Option<u128> {
        (self.hi == 0).then_some(self.lo)
    }

    /// `2^k` for `k < 160`.
    pub fn pow2(k: u32) -> Self {
        assert!(k < ID_BITS, "2^{k} is outside the identifier space");
        if k < 128 {
            Identifier { hi: 0, lo: 1 << k }
        } else {
            Identifier {
                hi: 1 << (k - 128),
                lo: 0,
            }
        }
    }

    /// Mask with the low `k` bits set (`2^k - 1`), `k <= 160`.
    pub fn low_mask(k: u32) -> Self {
        assert!(k <= ID_BITS);
        match k {
            0 => Self::ZERO,
            k if k < 128 => Identifier {
                hi: 0,
                lo: (1u128 << k) - 1,
            },
            128 => Identifier {
                hi: 0,
                lo: u128::MAX,
            },
            k if k < ID_BITS => Identifier {
                hi: (1u32 << (k - 128)) - 1,
                lo: u128::MAX,
            },
            _ => Self::MAX,
        }
    }

    pub fn and(self, other: Self) -> Self {
        Identifier {
            hi: self.hi & other.hi,
            lo: self.lo & other.lo,
        }
    }

    pub fn or(self, other: Self) -> Self {
        Identifier {
            hi: self.hi | other.hi,
            lo: self.lo | other.lo,
        }
    }

    pub fn not(self) -> Self {
        Identifier {
            hi: !self.hi,
            lo: !self.lo,
        }
    }

    /// Addition modulo `2^160`.
    pub fn wrapping_add(self, other: Self) -> Self {
        let (lo, carry) = self.lo.overflowing_add(other.lo);
        Identifier {
            hi: self.hi.wrapping_add(other.hi).wrapping_add(carry as u32),
            lo,
        }
    }

    /// Subtraction modulo `2^160`.
    pub fn wrapping_sub(self, other: Self) -> Self {
        let (lo, borrow) = self.lo.overflowing_sub(other.lo);
        Identifier {
            hi: self.hi.wrapping_sub(other.hi).wrapping_sub(borrow as u32),
            lo,
        }
    }

    pub fn shr(self, n: u32) -> Self {
        match n {
            0 => self,
            n if n < 32 => Identifier {
                hi: self.hi >> n,
                lo: (self.lo >> n) | ((self.hi as u128) << (128 - n)),
            },
            n if n < 128 => Identifier {
                hi: 0,
                lo: (self.lo >> n) | ((self.hi as u128) << (128 - n)),
            },
            n if n < ID_BITS => Identifier {
                hi: 0,
                lo: (self.hi >> (n - 128)) as u128,
            },
            _ => Self::ZERO,
        }
    }

    /// Number of significant bits (0 for zero).
    pub fn bits(self) -> u32 {
        if self.hi != 0 {
            128 + (32 - self.hi.leading_zeros())
        } else {
            128 - self.lo.leading_zeros()
        }
    }

    pub fn checked_add(self, other: Self) -> Option<Self> {
        let sum = self.wrapping_add(other);
        (sum >= self).then_some(sum)
    }

    pub fn to_hex(self) -> String {
        format!("{:08x}{:032x}", self.hi, self.lo)
    }

    /// Low 64 bits, for cheap sampling and seeding.
    pub fn low_u64(self) -> u64 {
        self.lo as u64
    }

    pub fn to_f64(self) -> f64 {
        self.hi as f64 * 2f64.powi(128) + self.lo as f64
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_u128() {
            Some(v) if v < 1 << 32 => write!(f, "Identifier({v})"),
            _ => write!(f, "Identifier(0x{})", self.to_hex()),
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Identifier {
    type Err = IdError;

    /// Accepts decimal, or hex with a `0x` prefix.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = match s.strip_prefix("0x") {
            Some(hex) => BigUint::parse_bytes(hex.as_bytes(), 16),
            None => BigUint::parse_bytes(s.as_bytes(), 10),
        };
        parsed
            .as_ref()
            .and_then(Identifier::from_biguint)
            .ok_or_else(|| IdError::Parameter(format!("not a 160-bit identifier: {s:?}")))
    }
}

impl From<u64> for Identifier {
    fn from(v: u64) -> Self {
        Identifier::from_u128(v as u128)
    }
}

impl Serialize for Identifier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Identifier::from_str(&format!("0x{s}")).map_err(serde::de::Error::custom)
    }
}

/// An identifier space `[0, 2^bits)`. Production uses the full 160-bit space;
/// smaller spaces reproduce hand-sized examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdSpace {
    bits: u32,
}

impl IdSpace {
    pub const SHA1: IdSpace = IdSpace { bits: ID_BITS };

    pub fn new(bits: u32) -> Result<Self, IdError> {
        if bits == 0 || bits > ID_BITS {
            return Err(IdError::Parameter(format!(
                "space width must be in 1..=160 bits, got {bits}"
            )));
        }
        Ok(IdSpace { bits })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    /// `N = 2^bits`.
    pub fn size(self) -> BigUint {
        BigUint::one() << self.bits
    }

    pub fn max_id(self) -> Identifier {
        Identifier::low_mask(self.bits)
    }

    pub fn contains(self, id: Identifier) -> bool {
        id <= self.max_id()
    }

    /// `(a + b) mod N`.
    pub fn add(self, a: Identifier, b: Identifier) -> Identifier {
        a.wrapping_add(b).and(self.max_id())
    }

    /// `(a - b) mod N`: the clockwise distance from `b` to `a`.
    pub fn distance(self, b: Identifier, a: Identifier) -> Identifier {
        a.wrapping_sub(b).and(self.max_id())
    }

    /// Number of identifiers in the clockwise half-open arc `(from, to]`.
    /// An arc from a point to itself covers the whole space.
    pub fn arc_len(self, from: Identifier, to: Identifier) -> BigUint {
        if from == to {
            self.size()
        } else {
            self.distance(from, to).to_biguint()
        }
    }
}

impl Default for IdSpace {
    fn default() -> Self {
        IdSpace::SHA1
    }
}

/// Lowercases and strips a trailing dot; rejects empty names and labels,
/// non-ASCII and oversize input.
pub fn canonical_name(name: &str) -> Result<String, IdError> {
    let invalid = |reason| IdError::InvalidName {
        name: name.to_string(),
        reason,
    };
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.is_empty() {
        return Err(invalid("empty name"));
    }
    if !trimmed.is_ascii() {
        return Err(invalid("name is not ASCII"));
    }
    if trimmed.len() > MAX_NAME_LEN {
        return Err(invalid("name longer than 255 bytes"));
    }
    if trimmed.bytes().any(|b| b.is_ascii_whitespace() || b.is_ascii_control()) {
        return Err(invalid("name contains whitespace or control bytes"));
    }
    if trimmed.split('.').any(|label| label.is_empty()) {
        return Err(invalid("name has an empty label"));
    }
    if trimmed.split('.').any(|label| label.len() > MAX_LABEL_LEN) {
        return Err(invalid("label longer than 63 bytes"));
    }
    Ok(trimmed.to_ascii_lowercase())
}

/// SHA-1 of the canonical name bytes, read as a big-endian integer.
pub fn hash_name(name: &str) -> Result<Identifier, IdError> {
    let canonical = canonical_name(name)?;
    Ok(hash_canonical(&canonical))
}

pub(crate) fn hash_canonical(canonical: &str) -> Identifier {
    let digest: [u8; 20] = Sha1::digest(canonical.as_bytes()).into();
    Identifier::from_be_bytes(digest)
}

/// A power-of-two sized, aligned interval `[start, start + 2^s - 1]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryRange {
    start: Identifier,
    size_exponent: u32,
}

impl QueryRange {
    /// Builds a range from an already aligned start.
    pub fn new(start: Identifier, size_exponent: u32) -> Result<Self, IdError> {
        if size_exponent > ID_BITS {
            return Err(IdError::Parameter(format!(
                "size exponent {size_exponent} exceeds {ID_BITS}"
            )));
        }
        if start.and(Identifier::low_mask(size_exponent)) != Identifier::ZERO {
            return Err(IdError::Parameter(format!(
                "start {start} is not aligned to 2^{size_exponent}"
            )));
        }
        Ok(QueryRange {
            start,
            size_exponent,
        })
    }

    pub fn start(&self) -> Identifier {
        self.start
    }

    pub fn size_exponent(&self) -> u32 {
        self.size_exponent
    }

    pub fn end(&self) -> Identifier {
        let end = self.start.or(Identifier::low_mask(self.size_exponent));
        debug_assert!(end >= self.start, "aligned ranges never wrap");
        end
    }

    /// Number of identifiers, `2^s`.
    pub fn len(&self) -> BigUint {
        BigUint::one() << self.size_exponent
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: Identifier) -> bool {
        id >= self.start && id <= self.end()
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains_range(&self, other: &QueryRange) -> bool {
        self.contains(other.start) && self.contains(other.end())
    }
}

impl fmt::Debug for QueryRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.start, self.end())
    }
}

impl fmt::Display for QueryRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end())
    }
}

/// Forms the aligned range of size `2^s` around `id`:
/// `[floor(id / 2^s) * 2^s, (floor(id / 2^s) + 1) * 2^s - 1]`.
pub fn form_range(id: Identifier, s: u32, space: IdSpace) -> Result<QueryRange, IdError> {
    if s > space.bits() {
        return Err(IdError::Parameter(format!(
            "size exponent {s} exceeds space width {}",
            space.bits()
        )));
    }
    if !space.contains(id) {
        return Err(IdError::Parameter(format!(
            "identifier {id} outside a {}-bit space",
            space.bits()
        )));
    }
    let start = id.and(Identifier::low_mask(s).not());
    Ok(QueryRange {
        start,
        size_exponent: s,
    })
}

/// How two aligned ranges relate. A partial overlap cannot occur.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeRelation {
    Disjoint,
    Equal,
    FirstInsideSecond,
    SecondInsideFirst,
}

pub fn range_relation(r1: &QueryRange, r2: &QueryRange) -> RangeRelation {
    let aligned = |r: &QueryRange, s: u32| r.start.and(Identifier::low_mask(s).not());
    match r1.size_exponent.cmp(&r2.size_exponent) {
        Ordering::Equal if r1.start == r2.start => RangeRelation::Equal,
        Ordering::Equal => RangeRelation::Disjoint,
        Ordering::Less if aligned(r1, r2.size_exponent) == r2.start => {
            RangeRelation::FirstInsideSecond
        }
        Ordering::Greater if aligned(r2, r1.size_exponent) == r1.start => {
            RangeRelation::SecondInsideFirst
        }
        _ => RangeRelation::Disjoint,
    }
}

/// The ratio of non-empty identifiers to all identifiers over some span,
/// kept as an exact rational so every client derives the same range size.
#[derive(Clone, PartialEq, Eq)]
pub struct DensityEstimate {
    rho: BigRational,
}

impl DensityEstimate {
    fn from_ratio(rho: BigRational) -> Result<Self, IdError> {
        if rho <= BigRational::zero() || rho > BigRational::one() {
            return Err(IdError::Parameter(format!("density {rho} outside (0, 1]")));
        }
        Ok(DensityEstimate { rho })
    }

    /// `numerator / denominator`, reduced.
    pub fn from_parts(numerator: BigUint, denominator: BigUint) -> Result<Self, IdError> {
        if denominator.is_zero() {
            return Err(IdError::Parameter("zero span".into()));
        }
        Self::from_ratio(BigRational::new(numerator.into(), denominator.into()))
    }

    pub fn one() -> Self {
        DensityEstimate {
            rho: BigRational::one(),
        }
    }

    pub fn ratio(&self) -> &BigRational {
        &self.rho
    }

    pub fn numerator(&self) -> BigUint {
        self.rho.numer().to_biguint().expect("density is positive")
    }

    pub fn denominator(&self) -> BigUint {
        self.rho.denom().to_biguint().expect("density is positive")
    }

    /// `log2(rho)`, for reporting only.
    pub fn log2(&self) -> f64 {
        let n = self.numerator();
        let d = self.denominator();
        log2_big(&n) - log2_big(&d)
    }
}

fn log2_big(v: &BigUint) -> f64 {
    let bits = v.bits();
    if bits <= 64 {
        return v.to_f64().unwrap_or(0.0).log2();
    }
    let shift = bits - 64;
    let top = (v >> shift).to_f64().unwrap_or(0.0);
    top.log2() + shift as f64
}

impl fmt::Debug for DensityEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityEstimate({})", self.rho)
    }
}

impl fmt::Display for DensityEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (log2 {:.3})", self.rho, self.log2())
    }
}

/// `rho = nonempty / span`, exactly.
pub fn estimate_density(nonempty: u64, span: &BigUint) -> Result<DensityEstimate, IdError> {
    if span.is_zero() {
        return Err(IdError::Parameter("zero span".into()));
    }
    if nonempty == 0 {
        return Err(IdError::EmptyStore);
    }
    if BigUint::from(nonempty) > *span {
        return Err(IdError::Parameter(format!(
            "{nonempty} non-empty identifiers exceed span {span}"
        )));
    }
    DensityEstimate::from_parts(BigUint::from(nonempty), span.clone())
}

/// Moving-average weight in `[0, 1]`, held as an exact rational.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmoothingWeight(BigRational);

impl SmoothingWeight {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, IdError> {
        if denominator == 0 || numerator > denominator {
            return Err(IdError::Parameter(format!(
                "weight {numerator}/{denominator} outside [0, 1]"
            )));
        }
        Ok(SmoothingWeight(BigRational::new(
            numerator.into(),
            denominator.into(),
        )))
    }

    pub fn ratio(&self) -> &BigRational {
        &self.0
    }
}

impl Default for SmoothingWeight {
    fn default() -> Self {
        SmoothingWeight::new(9, 10).expect("valid constant")
    }
}

impl FromStr for SmoothingWeight {
    type Err = IdError;

    /// Parses a plain decimal such as `0.9` or `1` exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IdError::Parameter(format!("weight {s:?} is not a decimal in [0, 1]"));
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        let numerator: u64 = digits.parse().map_err(|_| bad())?;
        let denominator = 10u64.pow(frac.len() as u32);
        SmoothingWeight::new(numerator, denominator).map_err(|_| bad())
    }
}

/// `alpha * old + (1 - alpha) * learned`.
pub fn update_density(
    old: &DensityEstimate,
    learned: &DensityEstimate,
    alpha: &SmoothingWeight,
) -> DensityEstimate {
    let a = alpha.ratio();
    let rho = a * &old.rho + (BigRational::one() - a) * &learned.rho;
    DensityEstimate { rho }
}

/// `s = ceil(log2(m / rho))`, clamped to `[0, 160]`.
pub fn range_size_exponent(m: u64, rho: &DensityEstimate) -> u32 {
    assert!(m >= 1, "security parameter must be at least 1");
    // Smallest s with 2^s >= m * denom / numer.
    let target = BigUint::from(m) * rho.denominator();
    let ceil = Integer::div_ceil(&target, &rho.numerator());
    if ceil <= BigUint::one() {
        return 0;
    }
    let s = (ceil - 1u32).bits() as u32;
    s.min(ID_BITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(v: u128) -> Identifier {
        Identifier::from_u128(v)
    }

    fn space10() -> IdSpace {
        IdSpace::new(10).unwrap()
    }

    #[test]
    fn hash_matches_reference_digests() {
        // Digests computed with Python's hashlib.
        assert_eq!(
            hash_name("abc").unwrap().to_hex(),
            "a9993e364706816aba3e25717850c26c9cd0d89d"
        );
        assert_eq!(
            hash_name("www.example.com").unwrap().to_hex(),
            "068503358dddd23cf6cf00f5d6ad9a45cd0a8e03"
        );
    }

    #[test]
    fn hash_is_canonical() {
        let a = hash_name("WWW.Example.COM.").unwrap();
        let b = hash_name("www.example.com").unwrap();
        assert_eq!(a, b);
        assert_eq!(hash_name("www.example.com").unwrap(), b);
    }

    #[test]
    fn hash_rejects_bad_names() {
        assert!(matches!(hash_name(""), Err(IdError::InvalidName { .. })));
        assert!(matches!(hash_name("."), Err(IdError::InvalidName { .. })));
        assert!(hash_name(&format!("{}.a", vec!["a".repeat(63); 4].join("."))).is_err());
        assert!(hash_name(&vec!["a".repeat(63); 4].join(".")).is_ok());
        assert!(hash_name("bücher.de").is_err());
        assert!(hash_name("bad..name").is_err());
        assert!(hash_name(&format!("{}.example", "a".repeat(64))).is_err());
        assert!(hash_name(&format!("{}.example", "a".repeat(63))).is_ok());
    }

    #[test]
    fn identifier_bytes_and_bigint_agree() {
        let v = hash_name("www.example.com").unwrap();
        assert_eq!(Identifier::from_be_bytes(v.to_be_bytes()), v);
        assert_eq!(Identifier::from_biguint(&v.to_biguint()), Some(v));
        assert_eq!(Identifier::from_biguint(&(BigUint::one() << 160)), None);
        assert_eq!(Identifier::MAX.to_biguint(), (BigUint::one() << 160) - 1u32);
        assert_eq!("0x29a".parse::<Identifier>().unwrap(), id(666));
    }

    #[test]
    fn shifts_and_masks() {
        let x = Identifier::MAX;
        assert_eq!(x.shr(159), id(1));
        assert_eq!(x.shr(160), Identifier::ZERO);
        assert_eq!(x.shr(32).bits(), 128);
        assert_eq!(Identifier::pow2(140).bits(), 141);
        assert_eq!(Identifier::low_mask(140).to_biguint(), (BigUint::one() << 140) - 1u32);
        assert_eq!(
            Identifier::pow2(130).wrapping_sub(id(1)),
            Identifier::low_mask(130)
        );
        assert_eq!(Identifier::MAX.wrapping_add(id(1)), Identifier::ZERO);
    }

    #[test]
    fn exponent_examples() {
        let half = DensityEstimate::from_parts(1u32.into(), 2u32.into()).unwrap();
        assert_eq!(range_size_exponent(16, &half), 5);
        assert_eq!(range_size_exponent(1, &DensityEstimate::one()), 0);
        let tiny = DensityEstimate::from_parts(1u32.into(), BigUint::one() << 20).unwrap();
        assert_eq!(range_size_exponent(128, &tiny), 27);
        let minimal = estimate_density(1, &IdSpace::SHA1.size()).unwrap();
        assert_eq!(range_size_exponent(1, &minimal), 160);
        assert_eq!(range_size_exponent(1024, &minimal), 160);
    }

    #[test]
    fn exponent_matches_float_oracle_off_boundaries() {
        for m in 1..300u64 {
            for (n, d) in [(1u64, 3u64), (2, 7), (5, 1000), (1, 1), (3, 4)] {
                let rho = DensityEstimate::from_parts(n.into(), d.into()).unwrap();
                let x = m as f64 * d as f64 / n as f64;
                if (x.log2() - x.log2().round()).abs() < 1e-9 {
                    continue;
                }
                let expected = x.log2().ceil().max(0.0) as u32;
                assert_eq!(range_size_exponent(m, &rho), expected, "m={m} rho={n}/{d}");
            }
        }
    }

    #[test]
    fn form_range_examples() {
        let r = form_range(id(665), 5, space10()).unwrap();
        assert_eq!((r.start(), r.end()), (id(640), id(671)));
        let r = form_range(id(0), 0, space10()).unwrap();
        assert_eq!((r.start(), r.end()), (id(0), id(0)));
        for i in 640..=671 {
            assert_eq!(form_range(id(i), 5, space10()).unwrap(), r_of(640, 5));
        }
        assert!(form_range(id(1), 11, space10()).is_err());
        assert!(form_range(id(1024), 3, space10()).is_err());
        let full = form_range(Identifier::MAX, 160, IdSpace::SHA1).unwrap();
        assert_eq!((full.start(), full.end()), (Identifier::ZERO, Identifier::MAX));
    }

    fn r_of(start: u128, s: u32) -> QueryRange {
        QueryRange::new(id(start), s).unwrap()
    }

    #[test]
    fn unaligned_range_rejected() {
        assert!(QueryRange::new(id(641), 5).is_err());
        assert!(QueryRange::new(id(640), 161).is_err());
    }

    #[test]
    fn relation_examples() {
        assert_eq!(range_relation(&r_of(640, 5), &r_of(640, 5)), RangeRelation::Equal);
        assert_eq!(
            range_relation(&r_of(640, 5), &r_of(512, 9)),
            RangeRelation::FirstInsideSecond
        );
        assert_eq!(
            range_relation(&r_of(512, 9), &r_of(640, 5)),
            RangeRelation::SecondInsideFirst
        );
        assert_eq!(range_relation(&r_of(0, 5), &r_of(32, 5)), RangeRelation::Disjoint);
        assert_eq!(range_relation(&r_of(0, 5), &r_of(512, 9)), RangeRelation::Disjoint);
    }

    #[test]
    fn density_examples() {
        let rho = estimate_density(512, &BigUint::from(1024u32)).unwrap();
        assert_eq!(rho, DensityEstimate::from_parts(1u32.into(), 2u32.into()).unwrap());
        let minimal = estimate_density(1, &IdSpace::SHA1.size()).unwrap();
        assert_eq!(minimal.denominator(), BigUint::one() << 160);
        assert_eq!(estimate_density(0, &BigUint::from(5u32)), Err(IdError::EmptyStore));
        assert!(matches!(
            estimate_density(1, &BigUint::zero()),
            Err(IdError::Parameter(_))
        ));
        assert!(estimate_density(6, &BigUint::from(5u32)).is_err());
    }

    #[test]
    fn update_examples() {
        let half = DensityEstimate::from_parts(1u32.into(), 2u32.into()).unwrap();
        let quarter = DensityEstimate::from_parts(1u32.into(), 4u32.into()).unwrap();
        let one = SmoothingWeight::new(1, 1).unwrap();
        let zero = SmoothingWeight::new(0, 1).unwrap();
        assert_eq!(update_density(&half, &quarter, &one), half);
        assert_eq!(update_density(&half, &quarter, &zero), quarter);
        let mixed = update_density(&half, &quarter, &"0.9".parse().unwrap());
        assert_eq!(
            mixed,
            DensityEstimate::from_parts(19u32.into(), 40u32.into()).unwrap()
        );
        assert_eq!(SmoothingWeight::default(), "0.9".parse().unwrap());
        assert!("1.5".parse::<SmoothingWeight>().is_err());
        assert!("-0.1".parse::<SmoothingWeight>().is_err());
        assert!(SmoothingWeight::new(3, 2).is_err());
    }
}
