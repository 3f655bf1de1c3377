//! Message framing.
//!
//! Binary: `version u8 ‖ kind u8 ‖ body`, the body in bincode with big-endian
//! fixed-width integers; trailing bytes are an error. Text: a JSON envelope
//! `{"version":1,"kind":"…","body":…}` with byte strings in base64.

use bincode::Options;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::WireError;
use crate::proofs::{AggregateProof, AuditProof, EpochDigest, LookupProof, MinMaxProof, NoisySumProof, QuantileProof};

pub const WIRE_VERSION: u8 = 1;
/// Upper bound on a decoded body, against hostile length prefixes.
const BODY_LIMIT: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Lookup = 1,
    Aggregate = 2,
    MinMax = 3,
    Quantile = 4,
    Audit = 5,
    NoisySum = 6,
    Digest = 7,
}

impl Kind {
    pub fn from_byte(b: u8) -> Result<Kind, WireError> {
        Ok(match b {
            1 => Kind::Lookup,
            2 => Kind::Aggregate,
            3 => Kind::MinMax,
            4 => Kind::Quantile,
            5 => Kind::Audit,
            6 => Kind::NoisySum,
            7 => Kind::Digest,
            _ => return Err(WireError::UnknownKind(b)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Lookup => "lookup",
            Kind::Aggregate => "aggregate",
            Kind::MinMax => "minmax",
            Kind::Quantile => "quantile",
            Kind::Audit => "audit",
            Kind::NoisySum => "noisy-sum",
            Kind::Digest => "digest",
        }
    }
}

pub trait Message: Serialize + DeserializeOwned {
    const KIND: Kind;
}

impl Message for LookupProof {
    const KIND: Kind = Kind::Lookup;
}
impl Message for AggregateProof {
    const KIND: Kind = Kind::Aggregate;
}
impl Message for MinMaxProof {
    const KIND: Kind = Kind::MinMax;
}
impl Message for QuantileProof {
    const KIND: Kind = Kind::Quantile;
}
impl Message for AuditProof {
    const KIND: Kind = Kind::Audit;
}
impl Message for NoisySumProof {
    const KIND: Kind = Kind::NoisySum;
}
impl Message for EpochDigest {
    const KIND: Kind = Kind::Digest;
}

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_big_endian()
        .with_fixint_encoding()
        .reject_trailing_bytes()
        .with_limit(BODY_LIMIT)
}

pub fn encode<M: Message>(m: &M) -> Vec<u8> {
    let mut out = vec![WIRE_VERSION, M::KIND as u8];
    options().serialize_into(&mut out, m).expect("proof objects always serialize");
    out
}

/// Version and kind of a framed message, without decoding the body.
pub fn peek(bytes: &[u8]) -> Result<Kind, WireError> {
    match bytes {
        [v, k, ..] => {
            if *v != WIRE_VERSION {
                return Err(WireError::Version(*v));
            }
            Kind::from_byte(*k)
        }
        _ => Err(WireError::Truncated),
    }
}

pub fn decode<M: Message>(bytes: &[u8]) -> Result<M, WireError> {
    let kind = peek(bytes)?;
    if kind != M::KIND {
        return Err(WireError::UnexpectedKind { expected: M::KIND.name(), got: kind.name() });
    }
    Ok(options().deserialize(&bytes[2..])?)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u8,
    kind: String,
    body: T,
}

pub fn to_text<M: Message>(m: &M) -> String {
    serde_json::to_string_pretty(&Envelope { version: WIRE_VERSION, kind: M::KIND.name().to_string(), body: m })
        .expect("proof objects always serialize")
}

pub fn from_text<M: Message>(s: &str) -> Result<M, WireError> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(s)?;
    if env.version != WIRE_VERSION {
        return Err(WireError::Version(env.version));
    }
    if env.kind != M::KIND.name() {
        let got = [Kind::Lookup, Kind::Aggregate, Kind::MinMax, Kind::Quantile, Kind::Audit, Kind::NoisySum, Kind::Digest]
            .into_iter()
            .find(|k| k.name() == env.kind)
            .map_or("unknown", Kind::name);
        return Err(WireError::UnexpectedKind { expected: M::KIND.name(), got });
    }
    Ok(serde_json::from_value(env.body)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefix_tree::RangeSpec;
    use crate::proofs::{Extreme, Quantile};
    use crate::sample;

    #[test]
    fn round_trips() {
        let s = sample::server();
        let spec = RangeSpec::all_types(s.layout(), 0, 1);
        let lookup = s.lookup("Bob", &[0], 1).unwrap();
        assert_eq!(decode::<LookupProof>(&encode(&lookup)).unwrap(), lookup);
        assert_eq!(from_text::<LookupProof>(&to_text(&lookup)).unwrap(), lookup);
        let agg = s.query_aggregate(&spec, 1).unwrap();
        assert_eq!(decode::<AggregateProof>(&encode(&agg)).unwrap(), agg);
        assert_eq!(from_text::<AggregateProof>(&to_text(&agg)).unwrap(), agg);
        let mm = s.query_minmax(&spec, Extreme::Max, 1).unwrap();
        assert_eq!(decode::<MinMaxProof>(&encode(&mm)).unwrap(), mm);
        let q = s.query_quantile(&spec, Quantile::MEDIAN, 1).unwrap();
        assert_eq!(decode::<QuantileProof>(&encode(&q)).unwrap(), q);
        assert_eq!(from_text::<QuantileProof>(&to_text(&q)).unwrap(), q);
        let a = s.audit_proof(None, 1).unwrap();
        assert_eq!(decode::<AuditProof>(&encode(&a)).unwrap(), a);
        let d = EpochDigest { epoch: 1, digest: s.digest(1).unwrap() };
        let bytes = encode(&d);
        assert_eq!(bytes.len(), 2 + 4 + 32);
        assert_eq!(&bytes[..6], &[1, 7, 0, 0, 0, 1]);
        assert_eq!(decode::<EpochDigest>(&bytes).unwrap(), d);
    }

    #[test]
    fn framing_errors() {
        let d = EpochDigest { epoch: 3, digest: crate::crypto::Digest256::ZERO };
        let mut bytes = encode(&d);
        assert!(matches!(decode::<LookupProof>(&bytes), Err(WireError::UnexpectedKind { expected: "lookup", got: "digest" })));
        bytes.push(0);
        assert!(matches!(decode::<EpochDigest>(&bytes), Err(WireError::Binary(_))));
        bytes.truncate(10);
        assert!(matches!(decode::<EpochDigest>(&bytes), Err(WireError::Binary(_))));
        assert!(matches!(decode::<EpochDigest>(&[1]), Err(WireError::Truncated)));
        assert!(matches!(decode::<EpochDigest>(&[2, 7]), Err(WireError::Version(2))));
        assert!(matches!(decode::<EpochDigest>(&[1, 99]), Err(WireError::UnknownKind(99))));
        let t = to_text(&d).replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(from_text::<EpochDigest>(&t), Err(WireError::Version(9))));
        assert!(matches!(
            from_text::<AuditProof>(&to_text(&d)),
            Err(WireError::UnexpectedKind { expected: "audit", got: "digest" })
        ));
    }

    #[test]
    fn hostile_lengths_are_bounded() {
        // a vector length of 2^63 must fail fast instead of allocating
        let mut bytes = vec![WIRE_VERSION, Kind::Audit as u8];
        bytes.extend_from_slice(&[0x80, 0, 0, 0, 0, 0, 0, 0]);
        assert!(decode::<AuditProof>(&bytes).is_err());
    }
}
