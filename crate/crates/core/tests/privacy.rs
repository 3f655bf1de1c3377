//! Information accounting by brute force: which stored values can an
//! observer pin down from verified answers?

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use tap_core::bulletin::MemoryBulletin;
use tap_core::prefix_tree::RangeSpec;
use tap_core::proofs::Quantile;
use tap_core::schema::Schema;
use tap_core::server::{SecretKey, Server};
use tap_core::store::Row;
use tap_core::sum_tree::walk_co_path;
use tap_core::verifier::Verifier;

const DOMAIN: u64 = 16;

fn bucket(values: &[u64], z: usize) -> Server {
    let schema = Schema { z, ..Schema::single_type("Type", &["residential"]) };
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, &v)| Row { time: 0, user_id: format!("u{i}"), types: vec![0], value: v })
        .collect();
    Server::initialize(schema, SecretKey::from_bytes(common::KEY), Arc::new(MemoryBulletin::new()), rows).unwrap()
}

fn tuples(k: usize) -> impl Iterator<Item = Vec<u64>> {
    (0..DOMAIN.pow(k as u32)).map(move |mut i| {
        (0..k)
            .map(|_| {
                let d = i % DOMAIN;
                i /= DOMAIN;
                d
            })
            .collect()
    })
}

/// Verified power sums over the whole bucket.
fn power_sums(s: &Server) -> Vec<u64> {
    let v = Verifier::new(s.schema()).unwrap();
    let spec = RangeSpec::all_types(s.layout(), 0, 0);
    let r = v.verify_aggregate(&spec, &s.query_aggregate(&spec, 0).unwrap(), &s.digest(0).unwrap()).unwrap();
    r.sums.iter().map(|x| x.try_into().unwrap()).collect()
}

#[test]
fn two_powers_reveal_a_pair_up_to_order() {
    // with v and v² committed, two unknowns are fixed as a set but not per user
    let values = [3, 7, 9, 12];
    let s = bucket(&values, 2);
    let sums = power_sums(&s);
    assert_eq!(sums, [31, 283]);
    let unknown: Vec<Vec<u64>> = tuples(2)
        .filter(|a| 3 + 7 + a[0] + a[1] == sums[0] && 9 + 49 + a[0] * a[0] + a[1] * a[1] == sums[1])
        .collect();
    assert_eq!(unknown, [vec![12, 9], vec![9, 12]]);
    // in a small domain the second power narrows even three unknowns to one
    // set: the sum-only leakage bound does not extend to z >= 2
    let sets: BTreeSet<Vec<u64>> = tuples(3)
        .filter(|a| 3 + a.iter().sum::<u64>() == sums[0] && 9 + a.iter().map(|x| x * x).sum::<u64>() == sums[1])
        .map(|mut a| {
            a.sort();
            a
        })
        .collect();
    assert_eq!(sets, BTreeSet::from([vec![7, 9, 12]]));
    // with the sum alone the same three stay wide open
    let sum_only = tuples(3).filter(|a| 3 + a.iter().sum::<u64>() == sums[0]).count();
    assert!(sum_only > 100, "{sum_only}");
}

#[test]
fn quantiles_reveal_at_most_one_value_each_even_with_ties() {
    // the fixture's epoch-1 residential bucket holds 19, 26, 26, 27
    let values = [19, 26, 26, 27];
    let s = bucket(&values, 2);
    let v = Verifier::new(s.schema()).unwrap();
    let spec = RangeSpec::all_types(s.layout(), 0, 0);
    let digest = s.digest(0).unwrap();
    let domain = 32u64;
    let mut seen = Vec::new();
    for (k, q) in ["1/2", "1/4", "1"].iter().enumerate() {
        let q: Quantile = q.parse().unwrap();
        let p = s.query_quantile(&spec, q, 0).unwrap();
        let x = v.verify_quantile(&spec, q, &p, &digest).unwrap();
        let pos = |l: &Option<tap_core::proofs::ProvenLeaf>| l.as_ref().map(|l| walk_co_path(&l.inclusion, 2).unwrap().left_count as usize);
        seen.push((x, pos(&p.entries[0].leq), pos(&p.entries[0].geq)));
        // every sorted bucket consistent with what was seen
        let mut fixed: Vec<Option<u64>> = vec![None; 4];
        let mut varies = [false; 4];
        let mut any = false;
        for a in (0..domain.pow(4)).map(|mut i| {
            let mut t = [0u64; 4];
            for x in t.iter_mut() {
                *x = i % domain;
                i /= domain;
            }
            t
        }) {
            if a.windows(2).any(|w| w[0] > w[1]) {
                continue;
            }
            if !seen.iter().all(|&(x, le, ge)| a.iter().rposition(|&v| v <= x) == le && a.iter().position(|&v| v >= x) == ge) {
                continue;
            }
            any = true;
            for i in 0..4 {
                match fixed[i] {
                    None => fixed[i] = Some(a[i]),
                    Some(f) => varies[i] |= f != a[i],
                }
            }
        }
        assert!(any);
        let revealed: BTreeSet<u64> = (0..4).filter(|&i| !varies[i]).map(|i| fixed[i].unwrap()).collect();
        assert!(revealed.len() <= k + 1, "after {} queries: {revealed:?}", k + 1);
        if k == 0 {
            // the tied median pins both of its leaves, yet only one distinct value
            assert_eq!(revealed, BTreeSet::from([26]));
            assert_eq!(varies, [true, false, false, true]);
        }
    }
}
