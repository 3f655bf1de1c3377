//! Synthetic workloads, proof sizes and five-way timing splits.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bulletin::MemoryBulletin;
use crate::prefix_tree::{verify_extension, verify_range_cover, Epoch, RangeSpec};
use crate::proofs::{Extreme, Quantile};
use crate::schema::{Schema, TypeAttribute, DEFAULT_TYPE_WIDTH};
use crate::server::{SecretKey, Server};
use crate::store::Row;
use crate::verifier::Verifier;
use crate::wire;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Rows per epoch.
    pub users: usize,
    pub epochs: usize,
    pub regions: u32,
    pub industrial_fraction: f64,
    /// Epochs covered by range queries, ending at the latest one.
    pub window: usize,
    /// Values are drawn from `[0, max_value)`.
    pub max_value: u64,
    pub seed: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload { users: 100, epochs: 4, regions: 10, industrial_fraction: 0.2, window: 1, max_value: 1000, seed: 1 }
    }
}

impl Workload {
    pub fn validate(&self) -> Result<(), String> {
        if self.users == 0 || self.epochs == 0 || self.regions == 0 || self.window == 0 || self.max_value == 0 {
            return Err("workload parameters must be positive".into());
        }
        if self.window > self.epochs {
            return Err(format!("window {} exceeds {} epochs", self.window, self.epochs));
        }
        if !(0.0..=1.0).contains(&self.industrial_fraction) {
            return Err("industrial fraction outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let region = TypeAttribute {
            name: "Region".into(),
            width: DEFAULT_TYPE_WIDTH,
            codes: (0..self.regions).map(|r| (format!("r{r}"), r)).collect(),
        };
        let kind = TypeAttribute {
            name: "Type".into(),
            width: DEFAULT_TYPE_WIDTH,
            codes: [("residential".to_string(), 0), ("industrial".to_string(), 1)].into_iter().collect(),
        };
        Schema { types: vec![region, kind], ..Schema::default() }
    }

    /// Rows for every epoch. Each user keeps a fixed region and type.
    pub fn rows(&self) -> Vec<Vec<Row>> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let profile: Vec<(u32, u32)> = (0..self.users)
            .map(|u| (u as u32 % self.regions, u32::from(rng.gen_bool(self.industrial_fraction))))
            .collect();
        (0..self.epochs)
            .map(|t| {
                profile
                    .iter()
                    .enumerate()
                    .map(|(u, &(region, kind))| Row {
                        time: t as Epoch,
                        user_id: format!("user{u}"),
                        types: vec![region, kind],
                        value: rng.gen_range(0..self.max_value),
                    })
                    .collect()
            })
            .collect()
    }

    /// Builds an in-memory server; returns it with each epoch's insert time.
    pub fn build(&self) -> (Server, Vec<Duration>) {
        let mut epochs = self.rows().into_iter();
        let t0 = Instant::now();
        let mut server = Server::initialize(
            self.schema(),
            SecretKey::from_bytes([self.seed as u8; 32]),
            Arc::new(MemoryBulletin::new()),
            epochs.next().unwrap_or_default(),
        )
        .expect("synthetic rows are valid");
        let mut times = vec![t0.elapsed()];
        for (t, rows) in epochs.enumerate() {
            let start = Instant::now();
            server.insert_epoch(t as Epoch + 1, rows).expect("synthetic rows are valid");
            times.push(start.elapsed());
        }
        (server, times)
    }

    pub fn latest(&self) -> Epoch {
        self.epochs as Epoch - 1
    }

    pub fn window_spec(&self, server: &Server) -> RangeSpec {
        let at = self.latest();
        RangeSpec::all_types(server.layout(), at + 1 - self.window as Epoch, at)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kind: String,
    pub proof_bytes: usize,
    pub prefix_gen: Duration,
    pub prefix_verify: Duration,
    pub sum_gen: Duration,
    pub sum_verify: Duration,
    /// Encoding, decoding and anything not attributed above.
    pub other: Duration,
    pub total: Duration,
}

impl BenchRecord {
    pub fn categories(&self) -> [Duration; 5] {
        [self.prefix_gen, self.prefix_verify, self.sum_gen, self.sum_verify, self.other]
    }
}

/// Median proof size per query kind, and whether the expected ordering holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub sizes: BTreeMap<String, usize>,
    /// lookup < sum < min/max ≤ quantile < audit.
    pub ordering_holds: bool,
    /// Median proofs are at least as large as 5th-percentile proofs.
    pub median_at_least_p05: bool,
}

pub const KINDS: [&str; 9] = ["lookup", "nonexistence", "sum", "count", "average", "minmax", "quantile-p50", "quantile-p05", "audit"];

fn record(kind: &str, bytes: Vec<u8>, gen: (Duration, Duration), verify_total: Duration, prefix_verify: Duration, codec: Duration, total: Duration) -> BenchRecord {
    let sum_verify = verify_total.saturating_sub(prefix_verify);
    let other = codec + total.saturating_sub(gen.0 + gen.1 + verify_total + codec);
    BenchRecord {
        kind: kind.into(),
        proof_bytes: bytes.len(),
        prefix_gen: gen.0,
        prefix_verify,
        sum_gen: gen.1,
        sum_verify,
        other,
        total,
    }
}

/// Runs every query kind `repetitions` times against a server built from `w`.
pub fn run(w: &Workload, server: &Server, repetitions: usize) -> Vec<BenchRecord> {
    let v = Verifier::new(server.schema()).expect("valid schema");
    let at = w.latest();
    let digest = server.digest(at).expect("published");
    let spec = w.window_spec(server);
    let mut out = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(w.seed ^ 0x5eed);
    let cover_time = |cover: &crate::prefix_tree::RangeCoverProof| {
        let t = Instant::now();
        verify_range_cover(v.layout(), &spec, cover, &digest).expect("honest cover");
        t.elapsed()
    };
    for _ in 0..repetitions {
        // look-up of a random user in the latest epoch
        let u = rng.gen_range(0..w.users);
        let user = format!("user{u}");
        let row = server.store().select_by_user_epoch(&user, at).expect("row").clone();
        let start = Instant::now();
        let key = server.layout().key(at, &row.row.types).expect("key");
        let t = Instant::now();
        let _ = server.prefix_tree().inclusion_proof_at(&key, at);
        let prefix_gen = t.elapsed();
        let t = Instant::now();
        let p = server.lookup(&user, &row.row.types, at).expect("lookup");
        let sum_gen = t.elapsed().saturating_sub(prefix_gen);
        let c = Instant::now();
        let bytes = wire::encode(&p);
        let p: crate::proofs::LookupProof = wire::decode(&bytes).expect("decode");
        let codec = c.elapsed();
        let t = Instant::now();
        v.verify_lookup(&user, &row.row.types, at, row.row.value, &row.seed, &p, &digest).expect("verifies");
        let verify_total = t.elapsed();
        let prefix_verify = {
            let crate::proofs::LookupProof::Present { prefix, sum, .. } = &p else { unreachable!() };
            let root = crate::sum_tree::walk_co_path(sum, server.schema().z).expect("path").root.hash;
            let t = Instant::now();
            crate::prefix_tree::verify_inclusion(v.layout(), &key, &root, prefix, &digest);
            t.elapsed()
        };
        out.push(record("lookup", bytes, (prefix_gen, sum_gen), verify_total, prefix_verify, codec, start.elapsed()));

        // someone absent from a bucket that exists
        let start = Instant::now();
        let t = Instant::now();
        let p = server.lookup("nobody", &row.row.types, at).expect("lookup");
        let gen = t.elapsed();
        let c = Instant::now();
        let bytes = wire::encode(&p);
        let p: crate::proofs::LookupProof = wire::decode(&bytes).expect("decode");
        let codec = c.elapsed();
        let t = Instant::now();
        v.verify_nonexistence("nobody", &row.row.types, at, &p, &digest).expect("verifies");
        let verify_total = t.elapsed();
        out.push(record("nonexistence", bytes, (prefix_gen, gen.saturating_sub(prefix_gen)), verify_total, prefix_verify, codec, start.elapsed()));

        for kind in ["sum", "count", "average"] {
            let start = Instant::now();
            let (p, timings) = server.query_aggregate_timed(&spec, at).expect("aggregate");
            let c = Instant::now();
            let bytes = wire::encode(&p);
            let p: crate::proofs::AggregateProof = wire::decode(&bytes).expect("decode");
            let codec = c.elapsed();
            let t = Instant::now();
            let r = v.verify_aggregate(&spec, &p, &digest).expect("verifies");
            let _ = match kind {
                "count" => Some(r.count as f64),
                "average" => r.mean(),
                _ => r.statistic(crate::verifier::Statistic::Sum),
            };
            let verify_total = t.elapsed();
            let pv = cover_time(&p.cover);
            out.push(record(kind, bytes, (timings.prefix_gen, timings.sum_gen), verify_total, pv, codec, start.elapsed()));
        }

        let mode = if rng.gen_bool(0.5) { Extreme::Min } else { Extreme::Max };
        let start = Instant::now();
        let (p, timings) = server.query_minmax_timed(&spec, mode, at).expect("minmax");
        let c = Instant::now();
        let bytes = wire::encode(&p);
        let p: crate::proofs::MinMaxProof = wire::decode(&bytes).expect("decode");
        let codec = c.elapsed();
        let t = Instant::now();
        v.verify_minmax(&spec, mode, &p, &digest).expect("verifies");
        let verify_total = t.elapsed();
        let pv = cover_time(&p.cover);
        out.push(record("minmax", bytes, (timings.prefix_gen, timings.sum_gen), verify_total, pv, codec, start.elapsed()));

        for (kind, q) in [("quantile-p50", Quantile::MEDIAN), ("quantile-p05", Quantile::new(1, 20).unwrap())] {
            let start = Instant::now();
            let (p, timings) = server.query_quantile_timed(&spec, q, at).expect("quantile");
            let c = Instant::now();
            let bytes = wire::encode(&p);
            let p: crate::proofs::QuantileProof = wire::decode(&bytes).expect("decode");
            let codec = c.elapsed();
            let t = Instant::now();
            v.verify_quantile(&spec, q, &p, &digest).expect("verifies");
            let verify_total = t.elapsed();
            let pv = cover_time(&p.cover);
            out.push(record(kind, bytes, (timings.prefix_gen, timings.sum_gen), verify_total, pv, codec, start.elapsed()));
        }

        // audit of the latest epoch
        let from = at.checked_sub(1);
        let start = Instant::now();
        let t = Instant::now();
        let _ = server.prefix_tree().extension_proof(from, at);
        let prefix_gen = t.elapsed();
        let t = Instant::now();
        let p = server.audit_proof(from, at).expect("audit");
        let sum_gen = t.elapsed().saturating_sub(prefix_gen);
        let c = Instant::now();
        let bytes = wire::encode(&p);
        let p: crate::proofs::AuditProof = wire::decode(&bytes).expect("decode");
        let codec = c.elapsed();
        let auditor = crate::auditor::Auditor::new(server.schema()).expect("valid schema");
        let t = Instant::now();
        let report = auditor.epoch_check(from, at, &p, server.bulletin().as_ref());
        assert!(report.passed(), "honest audit failed: {:?}", report.findings);
        let verify_total = t.elapsed();
        let old = match from {
            None => crate::prefix_tree::empty_digest(),
            Some(f) => server.digest(f).expect("published"),
        };
        let t = Instant::now();
        verify_extension(v.layout(), &p.extension, from, at, &old, &digest).expect("honest extension");
        let pv = t.elapsed();
        out.push(record("audit", bytes, (prefix_gen, sum_gen), verify_total, pv, codec, start.elapsed()));
    }
    out
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

pub fn summarize(records: &[BenchRecord]) -> BenchSummary {
    let mut by_kind: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in records {
        by_kind.entry(r.kind.clone()).or_default().push(r.proof_bytes);
    }
    let sizes: BTreeMap<String, usize> = by_kind.into_iter().map(|(k, v)| (k, median(v))).collect();
    let s = |k: &str| sizes.get(k).copied().unwrap_or(0);
    let ordering_holds = s("lookup") < s("sum")
        && s("sum") < s("minmax")
        && s("minmax") <= s("quantile-p50")
        && s("quantile-p50") < s("audit");
    let median_at_least_p05 = s("quantile-p50") >= s("quantile-p05");
    BenchSummary { sizes, ordering_holds, median_at_least_p05 }
}

/// Records as CSV lines, durations in microseconds.
pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("kind,proof_bytes,prefix_gen_us,prefix_verify_us,sum_gen_us,sum_verify_us,other_us,total_us\n");
    for r in records {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        out.push_str(&format!(
            "{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
            r.kind,
            r.proof_bytes,
            us(r.prefix_gen),
            us(r.prefix_verify),
            us(r.sum_gen),
            us(r.sum_verify),
            us(r.other),
            us(r.total)
        ));
    }
    out
}
