//! Client-side proof verification and derived statistics.
//!
//! A verifier sees only the public schema, the query, the proof, a digest
//! fetched from the bulletin and — for look-ups — its own value and seed.

use std::fmt;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::crypto::{commit, commit_u128, verify_range, Commitment, Digest256, Scalar, VALUE_DOMAIN};
use crate::dp::verify_noise_bound;
use crate::prefix_tree::{verify_inclusion, verify_range_cover, CoverRejection, Epoch, KeyLayout, RangeSpec};
use crate::proofs::{
    AggregateProof, Extreme, LookupProof, MinMaxProof, NoisySumProof, ProvenLeaf, Quantile, QuantileProof,
};
use crate::schema::Schema;
use crate::sum_tree::{self, id_hash, root_from_leaves, InclusionFacts, RootOpening};

/// Why a proof was refused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    Malformed(String),
    CoverInvalid(String),
    PrefixInclusion,
    SumInclusion { bucket: usize },
    LeafHashMismatch { bucket: usize },
    SumMismatch { power: usize },
    ValueMismatch { claimed: u64, expected: u64 },
    CommitmentMismatch,
    IdentityMismatch,
    /// A non-existence proof revealed the user's own identity hash.
    IdentityPresent,
    Position { bucket: usize },
    RangeProof { bucket: usize },
    WitnessMissing,
    EmptyRange,
    QuantileCounts { n: u64, at_most: u64, at_least: u64 },
    NoiseBound,
    /// An inclusion proof was supplied where the queried row was expected absent, or vice versa.
    WrongOutcome,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Malformed(s) => write!(f, "malformed proof: {s}"),
            Rejection::CoverInvalid(s) => write!(f, "range cover invalid: {s}"),
            Rejection::PrefixInclusion => f.write_str("prefix inclusion proof does not reach the digest"),
            Rejection::SumInclusion { bucket } => write!(f, "sum-tree inclusion proof invalid in bucket {bucket}"),
            Rejection::LeafHashMismatch { bucket } => write!(f, "bucket {bucket} opening does not hash to its prefix leaf"),
            Rejection::SumMismatch { power } => write!(f, "claimed sum of power {power} does not open the commitments"),
            Rejection::ValueMismatch { claimed, expected } => write!(f, "server reports {claimed}, expected {expected}"),
            Rejection::CommitmentMismatch => f.write_str("leaf commitment does not match own value and seed"),
            Rejection::IdentityMismatch => f.write_str("leaf belongs to another user or epoch"),
            Rejection::IdentityPresent => f.write_str("own identity appears among revealed leaves"),
            Rejection::Position { bucket } => write!(f, "proven leaf is not at the required position in bucket {bucket}"),
            Rejection::RangeProof { bucket } => write!(f, "range proof rejected in bucket {bucket}"),
            Rejection::WitnessMissing => f.write_str("no bucket witnesses the claimed extreme"),
            Rejection::EmptyRange => f.write_str("range holds no data"),
            Rejection::QuantileCounts { n, at_most, at_least } => {
                write!(f, "counts too small: {at_most} at most and {at_least} at least the value, of {n}")
            }
            Rejection::NoiseBound => f.write_str("noisy answer not proven within the noise bound"),
            Rejection::WrongOutcome => f.write_str("proof kind does not match the expected outcome"),
        }
    }
}

impl std::error::Error for Rejection {}

impl From<CoverRejection> for Rejection {
    fn from(r: CoverRejection) -> Self {
        Rejection::CoverInvalid(format!("{r:?}"))
    }
}

/// Verified power sums and count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub count: u64,
    pub sums: Vec<BigUint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    Sum,
    Count,
    Average,
    StdDev,
}

impl AggregateResult {
    pub fn sum(&self) -> &BigUint {
        &self.sums[0]
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| ratio(&self.sums[0], &BigUint::from(self.count)))
    }

    /// Sample standard deviation `sqrt((v2 - v1²/l) / (l - 1))`, computed as
    /// `sqrt((l·v2 - v1²) / (l·(l-1)))` in exact integers before the root.
    pub fn sample_stddev(&self) -> Option<f64> {
        if self.count < 2 || self.sums.len() < 2 {
            return None;
        }
        let l = BigUint::from(self.count);
        let num = &l * &self.sums[1] - &self.sums[0] * &self.sums[0];
        let den = &l * (&l - 1u32);
        Some(ratio(&num, &den).sqrt())
    }

    pub fn statistic(&self, s: Statistic) -> Option<f64> {
        match s {
            Statistic::Sum => self.sums[0].to_f64(),
            Statistic::Count => Some(self.count as f64),
            Statistic::Average => self.mean(),
            Statistic::StdDev => self.sample_stddev(),
        }
    }
}

/// `a / b` as the nearest-ish f64, robust to operands beyond f64 range.
fn ratio(a: &BigUint, b: &BigUint) -> f64 {
    let shift = a.bits().max(b.bits()).saturating_sub(1000);
    (a >> shift).to_f64().unwrap() / (b >> shift).to_f64().unwrap()
}

/// What a monitoring user expects for one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub epoch: Epoch,
    pub types: Vec<u32>,
    /// `None` when the user expects to have no row.
    pub value: Option<u64>,
    pub seed: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Finding {
    Ok,
    Missing,
    Mismatch { reported: u64, expected: u64 },
    Unexpected { reported: u64 },
    InvalidProof(Rejection),
    Unavailable(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub user: String,
    pub findings: Vec<(Epoch, Finding)>,
}

impl MonitorReport {
    pub fn is_clean(&self) -> bool {
        self.findings.iter().all(|(_, f)| *f == Finding::Ok)
    }

    /// One `key=value` record per epoch.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for (epoch, f) in &self.findings {
            let status = match f {
                Finding::Ok => "status=ok".to_string(),
                Finding::Missing => "status=missing".to_string(),
                Finding::Mismatch { reported, expected } => format!("status=mismatch reported={reported} expected={expected}"),
                Finding::Unexpected { reported } => format!("status=unexpected reported={reported}"),
                Finding::InvalidProof(r) => format!("status=invalid-proof reason={r:?}"),
                Finding::Unavailable(e) => format!("status=unavailable error={e:?}"),
            };
            out.push_str(&format!("user={} epoch={epoch} {status}\n", self.user));
        }
        out
    }
}

/// Outcome of a look-up as established by its proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LookupOutcome {
    Present(u64),
    Absent,
}

#[derive(Clone, Debug)]
pub struct Verifier {
    layout: KeyLayout,
    z: usize,
}

impl Verifier {
    pub fn new(schema: &Schema) -> Result<Self, crate::error::ServerError> {
        schema.validate()?;
        Ok(Verifier { layout: schema.layout()?, z: schema.z })
    }

    pub fn layout(&self) -> &KeyLayout {
        &self.layout
    }

    fn key(&self, types: &[u32], t: Epoch) -> Result<crate::prefix_tree::PrefixKey, Rejection> {
        self.layout.key(t, types).map_err(|e| Rejection::Malformed(e.to_string()))
    }

    /// Checks that `proof` shows the user's row `(own_value, own_seed)` in bucket `(t, types)`.
    #[allow(clippy::too_many_arguments)]
    pub fn verify_lookup(
        &self,
        user: &str,
        types: &[u32],
        t: Epoch,
        own_value: u64,
        own_seed: &Scalar,
        proof: &LookupProof,
        digest: &Digest256,
    ) -> Result<(), Rejection> {
        match self.check_lookup(user, types, t, Some(own_seed), proof, digest)? {
            LookupOutcome::Present(v) if v == own_value => Ok(()),
            LookupOutcome::Present(v) => Err(Rejection::ValueMismatch { claimed: v, expected: own_value }),
            LookupOutcome::Absent => Err(Rejection::WrongOutcome),
        }
    }

    /// Checks that `proof` shows the user has no row in bucket `(t, types)`.
    pub fn verify_nonexistence(
        &self,
        user: &str,
        types: &[u32],
        t: Epoch,
        proof: &LookupProof,
        digest: &Digest256,
    ) -> Result<(), Rejection> {
        match self.check_lookup(user, types, t, None, proof, digest)? {
            LookupOutcome::Absent => Ok(()),
            LookupOutcome::Present(_) => Err(Rejection::WrongOutcome),
        }
    }

    /// Verifies either kind of look-up answer. Presence requires the seed to
    /// check the commitments; without one a presence proof is refused.
    pub fn check_lookup(
        &self,
        user: &str,
        types: &[u32],
        t: Epoch,
        own_seed: Option<&Scalar>,
        proof: &LookupProof,
        digest: &Digest256,
    ) -> Result<LookupOutcome, Rejection> {
        let key = self.key(types, t)?;
        let own_id = id_hash(user, t);
        match proof {
            LookupProof::Present { value, prefix, sum } => {
                let seed = own_seed.ok_or(Rejection::WrongOutcome)?;
                if *value >= VALUE_DOMAIN {
                    return Err(Rejection::Malformed("value outside the domain".into()));
                }
                if sum.leaf.id_hash != own_id {
                    return Err(Rejection::IdentityMismatch);
                }
                if sum.leaf.commitments.len() != self.z {
                    return Err(Rejection::Malformed("wrong number of commitments".into()));
                }
                for (j, c) in sum.leaf.commitments.iter().enumerate() {
                    if *c != commit_u128((*value as u128).pow(j as u32 + 1), seed) {
                        return Err(Rejection::CommitmentMismatch);
                    }
                }
                let facts = sum_tree::walk_co_path(sum, self.z).ok_or(Rejection::SumInclusion { bucket: 0 })?;
                if !verify_inclusion(&self.layout, &key, &facts.root.hash, prefix, digest) {
                    return Err(Rejection::PrefixInclusion);
                }
                Ok(LookupOutcome::Present(*value))
            }
            LookupProof::AbsentFromBucket { prefix, leaves } => {
                if leaves.is_empty() || leaves.iter().any(|l| l.commitments.len() != self.z) {
                    return Err(Rejection::Malformed("bucket opening".into()));
                }
                let root = root_from_leaves(leaves, self.z);
                if !verify_inclusion(&self.layout, &key, &root.hash, prefix, digest) {
                    return Err(Rejection::PrefixInclusion);
                }
                if leaves.iter().any(|l| l.id_hash == own_id) {
                    return Err(Rejection::IdentityPresent);
                }
                Ok(LookupOutcome::Absent)
            }
            LookupProof::NoBucket { cover } => {
                let spec = RangeSpec::point(t, types);
                let leaves = verify_range_cover(&self.layout, &spec, cover, digest)?;
                if !leaves.is_empty() {
                    return Err(Rejection::CoverInvalid("bucket exists".into()));
                }
                Ok(LookupOutcome::Absent)
            }
        }
    }

    fn cover(&self, spec: &RangeSpec, cover: &crate::prefix_tree::RangeCoverProof, digest: &Digest256) -> Result<Vec<Digest256>, Rejection> {
        spec.validate(&self.layout).map_err(|e| Rejection::Malformed(e.to_string()))?;
        Ok(verify_range_cover(&self.layout, spec, cover, digest)?.into_iter().map(|l| l.value).collect())
    }

    fn openings_total(&self, phis: &[Digest256], openings: &[RootOpening]) -> Result<(Vec<Commitment>, u64), Rejection> {
        if openings.len() != phis.len() {
            return Err(Rejection::Malformed(format!("{} openings for {} buckets", openings.len(), phis.len())));
        }
        let mut total = vec![Commitment::identity(); self.z];
        let mut count = 0u64;
        for (i, (phi, o)) in phis.iter().zip(openings).enumerate() {
            let s = o.summary(self.z).ok_or(Rejection::Malformed(format!("opening {i}")))?;
            if s.hash != *phi {
                return Err(Rejection::LeafHashMismatch { bucket: i });
            }
            for (t, c) in total.iter_mut().zip(&s.commitments) {
                *t = *t + *c;
            }
            count = count.checked_add(s.count).ok_or(Rejection::Malformed("count overflow".into()))?;
        }
        Ok((total, count))
    }

    pub fn verify_aggregate(&self, spec: &RangeSpec, proof: &AggregateProof, digest: &Digest256) -> Result<AggregateResult, Rejection> {
        let phis = self.cover(spec, &proof.cover, digest)?;
        let (total, count) = self.openings_total(&phis, &proof.openings)?;
        if proof.sums.len() != self.z {
            return Err(Rejection::Malformed("wrong number of sums".into()));
        }
        for (j, (c, s)) in total.iter().zip(&proof.sums).enumerate() {
            let v = sum_tree::scalar_from_biguint(s).ok_or(Rejection::SumMismatch { power: j + 1 })?;
            if commit(&v, &proof.total_seed) != *c {
                return Err(Rejection::SumMismatch { power: j + 1 });
            }
        }
        Ok(AggregateResult { count, sums: proof.sums.clone() })
    }

    fn proven_leaf(&self, bucket: usize, phi: &Digest256, leaf: &ProvenLeaf, lo: u64, hi: u64) -> Result<InclusionFacts, Rejection> {
        let facts = sum_tree::verify_inclusion(&leaf.inclusion, self.z, phi).ok_or(Rejection::SumInclusion { bucket })?;
        if !verify_range(&leaf.inclusion.leaf.commitments[0], lo, hi, &leaf.range) {
            return Err(Rejection::RangeProof { bucket });
        }
        Ok(facts)
    }

    pub fn verify_minmax(&self, spec: &RangeSpec, mode: Extreme, proof: &MinMaxProof, digest: &Digest256) -> Result<u64, Rejection> {
        let phis = self.cover(spec, &proof.cover, digest)?;
        if phis.is_empty() {
            return Err(Rejection::EmptyRange);
        }
        if proof.entries.len() != phis.len() {
            return Err(Rejection::Malformed(format!("{} entries for {} buckets", proof.entries.len(), phis.len())));
        }
        let v = proof.value;
        if v >= VALUE_DOMAIN {
            return Err(Rejection::Malformed("value outside the domain".into()));
        }
        if proof.witness as usize >= phis.len() {
            return Err(Rejection::WitnessMissing);
        }
        for (i, (phi, e)) in phis.iter().zip(&proof.entries).enumerate() {
            let (lo, hi) = if i == proof.witness as usize {
                (v, v + 1)
            } else {
                match mode {
                    Extreme::Min => (v, VALUE_DOMAIN),
                    Extreme::Max => (0, v + 1),
                }
            };
            let facts = self.proven_leaf(i, phi, e, lo, hi)?;
            let at_edge = match mode {
                Extreme::Min => facts.left_count == 0,
                Extreme::Max => facts.right_count == 0,
            };
            if !at_edge {
                return Err(Rejection::Position { bucket: i });
            }
        }
        Ok(v)
    }

    pub fn verify_quantile(&self, spec: &RangeSpec, q: Quantile, proof: &QuantileProof, digest: &Digest256) -> Result<u64, Rejection> {
        let phis = self.cover(spec, &proof.cover, digest)?;
        if phis.is_empty() {
            return Err(Rejection::EmptyRange);
        }
        if proof.entries.len() != phis.len() {
            return Err(Rejection::Malformed(format!("{} entries for {} buckets", proof.entries.len(), phis.len())));
        }
        let v = proof.value;
        if v >= VALUE_DOMAIN {
            return Err(Rejection::Malformed("value outside the domain".into()));
        }
        let (mut n, mut at_most, mut at_least) = (0u64, 0u64, 0u64);
        for (i, (phi, e)) in phis.iter().zip(&proof.entries).enumerate() {
            let mut bucket_n = None;
            if let Some(geq) = &e.geq {
                let f = self.proven_leaf(i, phi, geq, v, VALUE_DOMAIN)?;
                at_least += f.right_count + 1;
                bucket_n = Some(f.root.count);
            }
            if let Some(leq) = &e.leq {
                let f = self.proven_leaf(i, phi, leq, 0, v + 1)?;
                at_most += f.left_count + 1;
                if bucket_n.is_some_and(|c| c != f.root.count) {
                    return Err(Rejection::SumInclusion { bucket: i });
                }
                bucket_n = Some(f.root.count);
            }
            n += bucket_n.ok_or(Rejection::Malformed(format!("bucket {i} proves neither side")))?;
        }
        if !q.admits(n, at_most, at_least) {
            return Err(Rejection::QuantileCounts { n, at_most, at_least });
        }
        Ok(v)
    }

    /// Checks a noisy sum; returns the verified count and noisy answer.
    pub fn verify_noisy_sum(&self, spec: &RangeSpec, proof: &NoisySumProof, digest: &Digest256) -> Result<(u64, i64), Rejection> {
        let phis = self.cover(spec, &proof.cover, digest)?;
        let (total, count) = self.openings_total(&phis, &proof.openings)?;
        if !verify_noise_bound(proof.noisy_sum, &total[0], proof.bound, &proof.range) {
            return Err(Rejection::NoiseBound);
        }
        Ok((count, proof.noisy_sum))
    }

    /// Runs one verified look-up per expectation and reports what it found.
    /// `fetch` returns the server's look-up answer and the bulletin digest
    /// for the epoch.
    pub fn monitor<F>(&self, user: &str, expected: &[Expectation], mut fetch: F) -> MonitorReport
    where
        F: FnMut(&Expectation) -> Result<(LookupProof, Digest256), String>,
    {
        let mut findings = Vec::with_capacity(expected.len());
        for exp in expected {
            let finding = match fetch(exp) {
                Err(e) => Finding::Unavailable(e),
                Ok((proof, digest)) => {
                    match self.check_lookup(user, &exp.types, exp.epoch, Some(&exp.seed), &proof, &digest) {
                        Err(r) => match (&proof, exp.value) {
                            // a value that does not match the user's own commitment
                            (LookupProof::Present { value, .. }, Some(expected)) if *value != expected => {
                                Finding::Mismatch { reported: *value, expected }
                            }
                            _ => Finding::InvalidProof(r),
                        },
                        Ok(LookupOutcome::Absent) => match exp.value {
                            Some(_) => Finding::Missing,
                            None => Finding::Ok,
                        },
                        Ok(LookupOutcome::Present(v)) => match exp.value {
                            Some(e) if e == v => Finding::Ok,
                            Some(e) => Finding::Mismatch { reported: v, expected: e },
                            None => Finding::Unexpected { reported: v },
                        },
                    }
                }
            };
            findings.push((exp.epoch, finding));
        }
        MonitorReport { user: user.to_string(), findings }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::NoiseDistribution;
    use crate::sample;
    use crate::server::Server;

    fn setup() -> (Server, Verifier) {
        let s = sample::server();
        let v = Verifier::new(s.schema()).unwrap();
        (s, v)
    }

    fn all(s: &Server, t0: Epoch, t1: Epoch) -> RangeSpec {
        RangeSpec::all_types(s.layout(), t0, t1)
    }

    #[test]
    fn every_row_verifies_its_own_lookup() {
        let (s, v) = setup();
        for r in sample::epoch0().into_iter().chain(sample::epoch1()) {
            let p = s.lookup(&r.user_id, &r.types, r.time).unwrap();
            let seed = s.epoch_secret(&r.user_id, r.time);
            let d = s.digest(r.time).unwrap();
            v.verify_lookup(&r.user_id, &r.types, r.time, r.value, &seed, &p, &d).unwrap();
            assert_eq!(
                v.verify_lookup(&r.user_id, &r.types, r.time, r.value + 1, &seed, &p, &d),
                Err(Rejection::ValueMismatch { claimed: r.value, expected: r.value + 1 })
            );
            let wrong = s.epoch_secret(&r.user_id, r.time + 1);
            assert_eq!(
                v.verify_lookup(&r.user_id, &r.types, r.time, r.value, &wrong, &p, &d),
                Err(Rejection::CommitmentMismatch)
            );
            // digest of the other epoch
            let other = s.digest(1 - r.time).unwrap();
            assert!(v.verify_lookup(&r.user_id, &r.types, r.time, r.value, &seed, &p, &other).is_err());
        }
    }

    #[test]
    fn someone_elses_row_is_refused() {
        let (s, v) = setup();
        let p = s.lookup("Alice", &[0], 0).unwrap();
        let seed = s.epoch_secret("Bob", 0);
        assert_eq!(
            v.verify_lookup("Bob", &[0], 0, 11, &seed, &p, &s.digest(0).unwrap()),
            Err(Rejection::IdentityMismatch)
        );
    }

    #[test]
    fn nonexistence_both_shapes() {
        let (s, v) = setup();
        let d1 = s.digest(1).unwrap();
        let p = s.lookup("Alice", &[1], 1).unwrap();
        assert!(matches!(p, LookupProof::AbsentFromBucket { .. }));
        v.verify_nonexistence("Alice", &[1], 1, &p, &d1).unwrap();
        // Erin is in that bucket
        let p = s.lookup("Erin", &[1], 1).unwrap();
        assert_eq!(v.verify_nonexistence("Erin", &[1], 1, &p, &d1), Err(Rejection::WrongOutcome));

        let p = s.lookup("Frank", &[0], 0).unwrap();
        v.verify_nonexistence("Frank", &[0], 0, &p, &s.digest(0).unwrap()).unwrap();

        let p = s.lookup("Alice", &[1], 0).unwrap();
        assert!(matches!(p, LookupProof::NoBucket { .. }));
        v.verify_nonexistence("Alice", &[1], 0, &p, &s.digest(0).unwrap()).unwrap();
        // a no-bucket cover does not transfer to a key that has one
        assert!(v.verify_nonexistence("Alice", &[0], 0, &p, &s.digest(0).unwrap()).is_err());

        // hiding a row behind a bucket opening that omits it
        let LookupProof::AbsentFromBucket { prefix, mut leaves } = s.lookup("Frank", &[0], 1).unwrap() else { panic!() };
        leaves.remove(0);
        let forged = LookupProof::AbsentFromBucket { prefix, leaves };
        assert_eq!(v.verify_nonexistence("Alice", &[0], 1, &forged, &d1), Err(Rejection::PrefixInclusion));
    }

    #[test]
    fn aggregate_statistics() {
        let (s, v) = setup();
        let spec = all(&s, 0, 1);
        let p = s.query_aggregate(&spec, 1).unwrap();
        let r = v.verify_aggregate(&spec, &p, &s.digest(1).unwrap()).unwrap();
        assert_eq!(r.count, 8);
        assert_eq!(r.sums, vec![BigUint::from(182u32), BigUint::from(4604u32)]);
        assert_eq!(r.mean(), Some(22.75));
        assert!((r.sample_stddev().unwrap() - 8.137216091163225).abs() < 1e-12);

        let spec0 = RangeSpec::new(0, 0, vec![(0, 0)]).unwrap();
        let p0 = s.query_aggregate(&spec0, 1).unwrap();
        let r0 = v.verify_aggregate(&spec0, &p0, &s.digest(1).unwrap()).unwrap();
        assert_eq!((r0.count, r0.sums[0].clone()), (3, BigUint::from(48u32)));

        let mut bad = p.clone();
        bad.sums[0] += 1u32;
        assert_eq!(v.verify_aggregate(&spec, &bad, &s.digest(1).unwrap()), Err(Rejection::SumMismatch { power: 1 }));
        let mut bad = p.clone();
        bad.sums[1] -= 1u32;
        assert_eq!(v.verify_aggregate(&spec, &bad, &s.digest(1).unwrap()), Err(Rejection::SumMismatch { power: 2 }));
        let mut bad = p.clone();
        bad.openings.pop();
        assert!(matches!(v.verify_aggregate(&spec, &bad, &s.digest(1).unwrap()), Err(Rejection::Malformed(_))));
        // the proof is for a wider range than the one asked about
        assert!(v.verify_aggregate(&spec0, &p, &s.digest(1).unwrap()).is_err());
    }

    #[test]
    fn empty_range_aggregates_to_zero() {
        let (s, v) = setup();
        let spec = RangeSpec::new(0, 0, vec![(1, 1)]).unwrap();
        let p = s.query_aggregate(&spec, 1).unwrap();
        let r = v.verify_aggregate(&spec, &p, &s.digest(1).unwrap()).unwrap();
        assert_eq!(r.count, 0);
        assert_eq!(r.mean(), None);
    }

    #[test]
    fn min_and_max() {
        let (s, v) = setup();
        let d = s.digest(1).unwrap();
        let spec = all(&s, 0, 1);
        for (mode, want) in [(Extreme::Min, 11), (Extreme::Max, 36)] {
            let p = s.query_minmax(&spec, mode, 1).unwrap();
            assert_eq!(v.verify_minmax(&spec, mode, &p, &d), Ok(want));
            let mut bad = p.clone();
            bad.value = want + 1;
            assert!(v.verify_minmax(&spec, mode, &bad, &d).is_err());
        }
        let spec = RangeSpec::new(0, 1, vec![(0, 0)]).unwrap();
        let p = s.query_minmax(&spec, Extreme::Max, 1).unwrap();
        assert_eq!(v.verify_minmax(&spec, Extreme::Max, &p, &d), Ok(27));
        // the max proof cannot be replayed as a min proof
        assert!(v.verify_minmax(&spec, Extreme::Min, &p, &d).is_err());
    }

    #[test]
    fn median_and_forced_candidates() {
        let (s, v) = setup();
        let d = s.digest(1).unwrap();
        let spec = all(&s, 0, 1);
        let p = s.query_quantile(&spec, Quantile::MEDIAN, 1).unwrap();
        assert_eq!(v.verify_quantile(&spec, Quantile::MEDIAN, &p, &d), Ok(26));
        for cand in [24, 25, 26] {
            let p = s.quantile_proof_for_value(&spec, cand, 1).unwrap();
            assert_eq!(v.verify_quantile(&spec, Quantile::MEDIAN, &p, &d), Ok(cand));
        }
        for cand in [0, 11, 19, 23, 27, 36, 100] {
            let p = s.quantile_proof_for_value(&spec, cand, 1).unwrap();
            assert!(matches!(
                v.verify_quantile(&spec, Quantile::MEDIAN, &p, &d),
                Err(Rejection::QuantileCounts { n: 8, .. })
            ));
        }
        // stripping a side from a bucket lowers the counts
        let mut bad = s.quantile_proof_for_value(&spec, 24, 1).unwrap();
        bad.entries[1].leq = None;
        assert!(v.verify_quantile(&spec, Quantile::MEDIAN, &bad, &d).is_err());
    }

    #[test]
    fn noisy_sum_within_bound() {
        let (s, v) = setup();
        let d = s.digest(1).unwrap();
        let spec = all(&s, 0, 1);
        let noise = NoiseDistribution::uniform(40);
        let mut rng = Server::seeded_rng(3);
        for _ in 0..5 {
            let p = s.query_noisy_sum(&spec, 1, &noise, &mut rng).unwrap();
            let (count, noisy) = v.verify_noisy_sum(&spec, &p, &d).unwrap();
            assert_eq!(count, 8);
            assert!((noisy - 182).abs() <= 40);
            let mut bad = p.clone();
            bad.noisy_sum += 41;
            assert_eq!(v.verify_noisy_sum(&spec, &bad, &d), Err(Rejection::NoiseBound));
        }
    }

    #[test]
    fn monitor_reports_tampering() {
        let (mut s, v) = setup();
        let exp = |epoch, value| Expectation {
            epoch,
            types: vec![0],
            value,
            seed: s.epoch_secret("Bob", epoch),
        };
        let expectations = vec![exp(0, Some(24)), exp(1, Some(26))];
        s.tamper_value("Bob", 1, 2).unwrap();
        let report = v.monitor("Bob", &expectations, |e| {
            let p = s.lookup("Bob", &e.types, e.epoch).map_err(|e| e.to_string())?;
            Ok((p, s.digest(e.epoch).unwrap()))
        });
        assert_eq!(report.findings[0], (0, Finding::Ok));
        assert_eq!(report.findings[1], (1, Finding::Mismatch { reported: 2, expected: 26 }));
        assert!(!report.is_clean());
        assert_eq!(
            report.to_records(),
            "user=Bob epoch=0 status=ok\nuser=Bob epoch=1 status=mismatch reported=2 expected=26\n"
        );
    }

    #[test]
    fn monitor_spots_omission() {
        let (s, v) = setup();
        // Frank believes he reported at epoch 1
        let e = Expectation { epoch: 1, types: vec![0], value: Some(5), seed: s.epoch_secret("Frank", 1) };
        let report = v.monitor("Frank", &[e], |e| Ok((s.lookup("Frank", &e.types, e.epoch).unwrap(), s.digest(e.epoch).unwrap())));
        assert_eq!(report.findings, vec![(1, Finding::Missing)]);
    }
}
