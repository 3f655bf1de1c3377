//! Benchmark harness: determinism and stable size orderings across seeds.

use tap_core::bench::{self, Workload, KINDS};
use tap_core::wire;

#[test]
fn orderings_hold_across_five_repetitions() {
    for seed in 1..=5 {
        let w = Workload { users: 60, epochs: 2, regions: 6, seed, ..Workload::default() };
        let (server, times) = w.build();
        assert_eq!(times.len(), 2);
        let records = bench::run(&w, &server, 2);
        assert_eq!(records.len(), 2 * KINDS.len());
        let summary = bench::summarize(&records);
        assert!(summary.ordering_holds, "seed {seed}: {:?}", summary.sizes);
        assert!(summary.median_at_least_p05, "seed {seed}: {:?}", summary.sizes);
        for r in &records {
            assert!(r.total >= r.prefix_gen + r.sum_gen, "{r:?}");
        }
    }
}

#[test]
fn same_seed_same_data() {
    let w = Workload { users: 30, epochs: 3, regions: 3, ..Workload::default() };
    let (a, _) = w.build();
    let (b, _) = w.build();
    assert_eq!(a.digest(2).unwrap(), b.digest(2).unwrap());
    let spec = w.window_spec(&a);
    assert_eq!(wire::encode(&a.query_aggregate(&spec, 2).unwrap()), wire::encode(&b.query_aggregate(&spec, 2).unwrap()));
    let other = Workload { seed: 2, ..w.clone() };
    assert_ne!(other.build().0.digest(2).unwrap(), a.digest(2).unwrap());
    let csv = bench::to_csv(&bench::run(&w, &a, 1));
    assert_eq!(csv.lines().count(), 1 + KINDS.len());
    assert!(csv.starts_with("kind,proof_bytes,"));
}

#[test]
fn workload_validation() {
    assert!(Workload::default().validate().is_ok());
    assert!(Workload { window: 9, ..Workload::default() }.validate().is_err());
    assert!(Workload { users: 0, ..Workload::default() }.validate().is_err());
    assert!(Workload { industrial_fraction: 1.5, ..Workload::default() }.validate().is_err());
}
