//! Byte-level damage to framed proofs: every flip or truncation is refused,
//! either by the decoder or by the verifier.

mod common;

use proptest::prelude::*;
use std::sync::OnceLock;

use tap_core::auditor::Auditor;
use tap_core::crypto::{Digest256, Scalar};
use tap_core::prefix_tree::RangeSpec;
use tap_core::proofs::{AggregateProof, AuditProof, Extreme, LookupProof, MinMaxProof, QuantileProof};
use tap_core::server::Server;
use tap_core::verifier::Verifier;
use tap_core::wire::{self, Message};

struct Ctx {
    server: Server,
    verifier: Verifier,
    auditor: Auditor,
    spec: RangeSpec,
    digest: Digest256,
    bob_seed: Scalar,
    frames: Vec<(&'static str, Vec<u8>)>,
}

fn ctx() -> &'static Ctx {
    static CTX: OnceLock<Ctx> = OnceLock::new();
    CTX.get_or_init(|| {
        let server = common::fixture();
        let spec = RangeSpec::all_types(server.layout(), 0, 1);
        let frames = vec![
            ("lookup", wire::encode(&server.lookup("Bob", &[0], 1).unwrap())),
            ("absent", wire::encode(&server.lookup("Zed", &[0], 1).unwrap())),
            ("sum", wire::encode(&server.query_aggregate(&spec, 1).unwrap())),
            ("max", wire::encode(&server.query_minmax(&spec, Extreme::Max, 1).unwrap())),
            ("median", wire::encode(&server.query_quantile(&spec, tap_core::proofs::Quantile::MEDIAN, 1).unwrap())),
            ("audit", wire::encode(&server.audit_proof(None, 1).unwrap())),
        ];
        Ctx {
            verifier: Verifier::new(server.schema()).unwrap(),
            auditor: Auditor::new(server.schema()).unwrap(),
            digest: server.digest(1).unwrap(),
            bob_seed: server.store().select_by_user_epoch("Bob", 1).unwrap().seed,
            spec,
            frames,
            server,
        }
    })
}

/// `Ok(true)` when the frame decodes and verifies.
fn accepts(kind: &str, bytes: &[u8]) -> Result<bool, tap_core::error::WireError> {
    let c = ctx();
    let (v, d, spec) = (&c.verifier, &c.digest, &c.spec);
    Ok(match kind {
        "lookup" => v.verify_lookup("Bob", &[0], 1, 26, &c.bob_seed, &wire::decode::<LookupProof>(bytes)?, d).is_ok(),
        "absent" => v.verify_nonexistence("Zed", &[0], 1, &wire::decode::<LookupProof>(bytes)?, d).is_ok(),
        "sum" => v.verify_aggregate(spec, &wire::decode::<AggregateProof>(bytes)?, d).is_ok(),
        "max" => v.verify_minmax(spec, Extreme::Max, &wire::decode::<MinMaxProof>(bytes)?, d).is_ok(),
        "median" => v
            .verify_quantile(spec, tap_core::proofs::Quantile::MEDIAN, &wire::decode::<QuantileProof>(bytes)?, d)
            .is_ok(),
        "audit" => c.auditor.epoch_check(None, 1, &wire::decode::<AuditProof>(bytes)?, c.server.bulletin().as_ref()).passed(),
        _ => unreachable!(),
    })
}

#[test]
fn honest_frames_verify() {
    for (kind, bytes) in &ctx().frames {
        assert!(accepts(kind, bytes).unwrap(), "{kind}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bit_flips_are_refused(which in 0..6usize, pos in any::<prop::sample::Index>(), bit in 0..8u8) {
        let (kind, bytes) = &ctx().frames[which];
        let mut bytes = bytes.clone();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(!matches!(accepts(kind, &bytes), Ok(true)), "{} accepted a flip at byte {}", kind, i);
    }

    #[test]
    fn truncations_and_extensions_are_refused(which in 0..6usize, cut in any::<prop::sample::Index>(), extra in prop::collection::vec(any::<u8>(), 1..8)) {
        let (kind, bytes) = &ctx().frames[which];
        let short = &bytes[..cut.index(bytes.len())];
        prop_assert!(accepts(kind, short).is_err());
        let mut long = bytes.clone();
        long.extend_from_slice(&extra);
        prop_assert!(accepts(kind, &long).is_err());
    }

    #[test]
    fn random_bytes_never_verify(which in 0..6usize, body in prop::collection::vec(any::<u8>(), 0..512)) {
        let (kind, bytes) = &ctx().frames[which];
        let mut frame = bytes[..2].to_vec();
        frame.extend_from_slice(&body);
        prop_assert!(!matches!(accepts(kind, &frame), Ok(true)));
    }
}

fn text_round_trip<M: Message + PartialEq + std::fmt::Debug>(bytes: &[u8]) {
    let m: M = wire::decode(bytes).unwrap();
    assert_eq!(wire::from_text::<M>(&wire::to_text(&m)).unwrap(), m);
    assert_eq!(wire::encode(&m), bytes);
}

#[test]
fn text_and_binary_agree() {
    let f = &ctx().frames;
    text_round_trip::<LookupProof>(&f[0].1);
    text_round_trip::<LookupProof>(&f[1].1);
    text_round_trip::<AggregateProof>(&f[2].1);
    text_round_trip::<MinMaxProof>(&f[3].1);
    text_round_trip::<QuantileProof>(&f[4].1);
    text_round_trip::<AuditProof>(&f[5].1);
}

#[test]
fn frame_sizes_are_stable() {
    // frozen: the encoding is part of the protocol
    let sizes: Vec<(&str, usize)> = ctx().frames.iter().map(|(k, b)| (*k, b.len())).collect();
    assert_eq!(
        sizes,
        [("lookup", 451), ("absent", 515), ("sum", 2474), ("max", 4866), ("median", 5948), ("audit", 5046)]
    );
}
