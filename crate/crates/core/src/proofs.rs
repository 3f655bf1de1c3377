//! Proof objects exchanged between server, clients and auditors.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{Digest256, RangeProof, Scalar};
use crate::prefix_tree::{ExtensionProof, PrefixInclusionProof, RangeCoverProof};
use crate::sum_tree::{RootOpening, SumInclusionProof, SumLeaf};

/// Answer to a look-up for one user at one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LookupProof {
    /// The row exists: its value, the bucket's prefix proof and the leaf's co-path.
    Present { value: u64, prefix: PrefixInclusionProof, sum: SumInclusionProof },
    /// The bucket exists but holds no row for the user; every leaf is revealed.
    AbsentFromBucket { prefix: PrefixInclusionProof, leaves: Vec<SumLeaf> },
    /// No bucket for the requested key at that epoch.
    NoBucket { cover: RangeCoverProof },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateProof {
    pub cover: RangeCoverProof,
    pub total_seed: Scalar,
    /// Claimed `Σ v^j` for `j = 1..=z`.
    #[serde(with = "biguint_vec")]
    pub sums: Vec<BigUint>,
    /// One root opening per covered bucket, in cover order.
    pub openings: Vec<RootOpening>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extreme {
    Min,
    Max,
}

impl FromStr for Extreme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min" => Ok(Extreme::Min),
            "max" => Ok(Extreme::Max),
            _ => Err(format!("expected min or max, got {s:?}")),
        }
    }
}

/// Range-proven leaf of one bucket.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenLeaf {
    pub inclusion: SumInclusionProof,
    pub range: RangeProof,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinMaxProof {
    pub cover: RangeCoverProof,
    pub value: u64,
    /// Bucket (index into the cover's leaves) holding the extreme value.
    pub witness: u32,
    /// Each bucket's leftmost (min) or rightmost (max) leaf.
    pub entries: Vec<ProvenLeaf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileEntry {
    /// Leftmost leaf with value `>= v*`.
    pub geq: Option<ProvenLeaf>,
    /// Rightmost leaf with value `<= v*`.
    pub leq: Option<ProvenLeaf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileProof {
    pub cover: RangeCoverProof,
    pub value: u64,
    pub entries: Vec<QuantileEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketAudit {
    /// All leaves in tree order.
    pub leaves: Vec<SumLeaf>,
    /// `v_{i+1} - v_i ∈ [0, 2^32)` on consecutive leaf commitments.
    pub sortedness: Vec<RangeProof>,
    /// `v_i ∈ [0, γ]`, present when the schema sets γ.
    pub bounds: Vec<RangeProof>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditProof {
    pub extension: ExtensionProof,
    /// One slot per new bucket, in key order; `None` for buckets left out of a sampled audit.
    pub buckets: Vec<Option<BucketAudit>>,
}

impl AuditProof {
    pub fn sortedness_count(&self) -> usize {
        self.buckets.iter().flatten().map(|b| b.sortedness.len()).sum()
    }

    pub fn bound_count(&self) -> usize {
        self.buckets.iter().flatten().map(|b| b.bounds.len()).sum()
    }
}

/// Noisy sum with a proof that it lies within `b` of the committed true sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisySumProof {
    pub cover: RangeCoverProof,
    pub openings: Vec<RootOpening>,
    pub noisy_sum: i64,
    pub bound: u64,
    pub range: RangeProof,
}

/// Exact quantile level `num/den ∈ [0, 1]`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Quantile {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Quantile {
    pub fn new(num: u64, den: u64) -> Result<Self, String> {
        if den == 0 || num > den {
            return Err(format!("quantile {num}/{den} outside [0, 1]"));
        }
        let g = gcd(num, den).max(1);
        Ok(Quantile { num: num / g, den: den / g })
    }

    pub const MEDIAN: Quantile = Quantile { num: 1, den: 2 };

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// `count_le >= n·q` and `count_ge >= n·(1-q)`.
    pub fn admits(&self, n: u64, count_le: u64, count_ge: u64) -> bool {
        let (n, num, den) = (n as u128, self.num as u128, self.den as u128);
        count_le as u128 * den >= n * num && count_ge as u128 * den >= n * (den - num)
    }

    /// Whether `v` is a valid quantile of `values` (brute force).
    pub fn is_valid_for(&self, values: &[u64], v: u64) -> bool {
        let le = values.iter().filter(|&&x| x <= v).count() as u64;
        let ge = values.iter().filter(|&&x| x >= v).count() as u64;
        self.admits(values.len() as u64, le, ge)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Quantile {
    type Err = String;

    /// Accepts `a/b` or a decimal such as `0.05`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| format!("bad quantile {s:?}"))?;
            let b = b.trim().parse().map_err(|_| format!("bad quantile {s:?}"))?;
            return Quantile::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || s.is_empty() {
            return Err(format!("bad quantile {s:?}"));
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| format!("bad quantile {s:?}"))? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().unwrap() };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(|| format!("bad quantile {s:?}"))?;
        Quantile::new(num, den)
    }
}

impl fmt::Display for Quantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Quantile {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.num, self.den).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Quantile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (num, den) = <(u64, u64)>::deserialize(d)?;
        Quantile::new(num, den).map_err(serde::de::Error::custom)
    }
}

/// Power sums travel as 32-byte big-endian integers.
mod biguint_vec {
    use super::*;
    use crate::crypto::fixed_bytes;

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "fixed_bytes")] [u8; 32]);

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        let mut out = Vec::with_capacity(v.len());
        for x in v {
            let bytes = x.to_bytes_be();
            if bytes.len() > 32 {
                return Err(serde::ser::Error::custom("sum exceeds 256 bits"));
            }
            let mut buf = [0u8; 32];
            buf[32 - bytes.len()..].copy_from_slice(&bytes);
            out.push(Wrapped(buf));
        }
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        let v = Vec::<Wrapped>::deserialize(d)?;
        Ok(v.into_iter().map(|w| BigUint::from_bytes_be(&w.0)).collect())
    }
}

/// Everything a client needs besides the proof: which digest to check against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochDigest {
    pub epoch: u32,
    pub digest: Digest256,
}
