//! Epoch audits: the prefix tree only grew, and every new bucket is sorted
//! (and, when the schema sets γ, bounded).

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bulletin::Bulletin;
use crate::crypto::{verify_range, VALUE_DOMAIN};
use crate::prefix_tree::{empty_digest, verify_extension, Epoch, ExtensionRejection, KeyLayout};
use crate::proofs::{AuditProof, BucketAudit};
use crate::schema::Schema;
use crate::sum_tree::root_from_leaves;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditFinding {
    /// A digest needed for the audit is not on the bulletin.
    Bulletin(String),
    /// The proof is for a different epoch pair than requested.
    EpochMismatch,
    Extension(String),
    BucketCount { expected: usize, got: usize },
    /// A sampled bucket came back without its proofs.
    Withheld { bucket: usize },
    EmptyBucket { bucket: usize },
    LeafHash { bucket: usize },
    ProofCount { bucket: usize },
    /// Leaves `pair` and `pair + 1` are not in ascending order.
    Unsorted { bucket: usize, pair: usize },
    OutOfBound { bucket: usize, leaf: usize },
}

impl fmt::Display for AuditFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditFinding::Bulletin(e) => write!(f, "bulletin: {e}"),
            AuditFinding::EpochMismatch => f.write_str("proof covers other epochs than requested"),
            AuditFinding::Extension(e) => write!(f, "extension proof rejected: {e}"),
            AuditFinding::BucketCount { expected, got } => write!(f, "{got} bucket slots for {expected} new buckets"),
            AuditFinding::Withheld { bucket } => write!(f, "bucket {bucket} sampled but withheld"),
            AuditFinding::EmptyBucket { bucket } => write!(f, "bucket {bucket} is empty"),
            AuditFinding::LeafHash { bucket } => write!(f, "bucket {bucket} leaves do not hash to its digest"),
            AuditFinding::ProofCount { bucket } => write!(f, "bucket {bucket} has the wrong number of proofs"),
            AuditFinding::Unsorted { bucket, pair } => write!(f, "bucket {bucket} leaves {pair} and {} out of order", pair + 1),
            AuditFinding::OutOfBound { bucket, leaf } => write!(f, "bucket {bucket} leaf {leaf} exceeds the bound"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub t_old: Option<Epoch>,
    pub t_new: Epoch,
    pub new_buckets: usize,
    pub buckets_checked: usize,
    pub sortedness_checked: usize,
    pub bounds_checked: usize,
    pub findings: Vec<AuditFinding>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Auditor {
    layout: KeyLayout,
    z: usize,
    gamma: Option<u64>,
}

impl Auditor {
    pub fn new(schema: &Schema) -> Result<Self, crate::error::ServerError> {
        schema.validate()?;
        Ok(Auditor { layout: schema.layout()?, z: schema.z, gamma: schema.gamma })
    }

    /// Full audit of the step `t_old → t_new`; every new bucket must carry proofs.
    pub fn epoch_check(&self, t_old: Option<Epoch>, t_new: Epoch, proof: &AuditProof, bulletin: &dyn Bulletin) -> AuditReport {
        self.check(t_old, t_new, proof, bulletin, None)
    }

    /// Audit that only demands proofs for the buckets picked by
    /// [`sample_indices`]`(n, fraction, seed)`.
    pub fn randomized_audit(
        &self,
        t_old: Option<Epoch>,
        t_new: Epoch,
        proof: &AuditProof,
        bulletin: &dyn Bulletin,
        fraction: f64,
        seed: u64,
    ) -> AuditReport {
        let sample: BTreeSet<usize> = sample_indices(proof.buckets.len(), fraction, seed).into_iter().collect();
        self.check(t_old, t_new, proof, bulletin, Some(&sample))
    }

    fn check(
        &self,
        t_old: Option<Epoch>,
        t_new: Epoch,
        proof: &AuditProof,
        bulletin: &dyn Bulletin,
        sample: Option<&BTreeSet<usize>>,
    ) -> AuditReport {
        let mut report = AuditReport { t_old, t_new, ..Default::default() };
        if proof.extension.t_old != t_old || proof.extension.t_new != t_new {
            report.findings.push(AuditFinding::EpochMismatch);
            return report;
        }
        let old = match t_old {
            None => Ok(empty_digest()),
            Some(t) => bulletin.get(t as u64),
        };
        let (old, new) = match (old, bulletin.get(t_new as u64)) {
            (Ok(o), Ok(n)) => (o, n),
            (Err(e), _) | (_, Err(e)) => {
                report.findings.push(AuditFinding::Bulletin(e.to_string()));
                return report;
            }
        };
        let leaves = match verify_extension(&self.layout, &proof.extension, t_old, t_new, &old, &new) {
            Ok(l) => l,
            Err(e) => {
                report.findings.push(AuditFinding::Extension(extension_reason(e).into()));
                return report;
            }
        };
        report.new_buckets = leaves.len();
        if proof.buckets.len() != leaves.len() {
            report.findings.push(AuditFinding::BucketCount { expected: leaves.len(), got: proof.buckets.len() });
            return report;
        }
        for (i, (leaf, slot)) in leaves.iter().zip(&proof.buckets).enumerate() {
            let wanted = sample.is_none_or(|s| s.contains(&i));
            match slot {
                None if wanted => report.findings.push(AuditFinding::Withheld { bucket: i }),
                None => {}
                Some(b) => {
                    report.buckets_checked += 1;
                    self.check_bucket(i, &leaf.value, b, &mut report);
                }
            }
        }
        report
    }

    fn check_bucket(&self, i: usize, phi: &crate::crypto::Digest256, b: &BucketAudit, report: &mut AuditReport) {
        let n = b.leaves.len();
        if n == 0 {
            report.findings.push(AuditFinding::EmptyBucket { bucket: i });
            return;
        }
        if b.leaves.iter().any(|l| l.commitments.len() != self.z) || root_from_leaves(&b.leaves, self.z).hash != *phi {
            report.findings.push(AuditFinding::LeafHash { bucket: i });
            return;
        }
        let bounds_expected = if self.gamma.is_some() { n } else { 0 };
        if b.sortedness.len() != n - 1 || b.bounds.len() != bounds_expected {
            report.findings.push(AuditFinding::ProofCount { bucket: i });
            return;
        }
        for (k, (w, p)) in b.leaves.windows(2).zip(&b.sortedness).enumerate() {
            let diff = w[1].commitments[0] - w[0].commitments[0];
            report.sortedness_checked += 1;
            if !verify_range(&diff, 0, VALUE_DOMAIN, p) {
                report.findings.push(AuditFinding::Unsorted { bucket: i, pair: k });
            }
        }
        if let Some(gamma) = self.gamma {
            for (k, (l, p)) in b.leaves.iter().zip(&b.bounds).enumerate() {
                report.bounds_checked += 1;
                if !verify_range(&l.commitments[0], 0, gamma + 1, p) {
                    report.findings.push(AuditFinding::OutOfBound { bucket: i, leaf: k });
                }
            }
        }
    }
}

fn extension_reason(e: ExtensionRejection) -> &'static str {
    match e {
        ExtensionRejection::EpochMismatch => "proof covers other epochs",
        ExtensionRejection::EpochOrder => "epochs out of order",
        ExtensionRejection::Malformed => "malformed",
        ExtensionRejection::NewLeafOutsideWindow => "a new leaf lies outside the audited epochs",
        ExtensionRejection::FrontierAfterOldEpoch => "old subtree holds data newer than the old epoch",
        ExtensionRejection::OldDigestMismatch => "old digest mismatch",
        ExtensionRejection::NewDigestMismatch => "new digest mismatch",
    }
}

/// `ceil(fraction · total)` distinct bucket indices, sorted, drawn from a
/// ChaCha stream keyed by `seed`. At least one index when `total > 0` and `fraction > 0`.
pub fn sample_indices(total: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let fraction = if fraction.is_nan() { 0.0 } else { fraction.clamp(0.0, 1.0) };
    let m = ((fraction * total as f64).ceil() as usize).min(total);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v = index::sample(&mut rng, total, m).into_vec();
    v.sort_unstable();
    v
}

/// Probability that a uniform sample of `sampled` out of `total` buckets
/// hits at least one of `bad` misbehaving ones.
pub fn detection_probability(total: usize, bad: usize, sampled: usize) -> f64 {
    if bad == 0 {
        return 0.0;
    }
    if sampled + bad > total {
        return 1.0;
    }
    // 1 - C(total-bad, sampled) / C(total, sampled)
    let miss: f64 = (0..sampled).map(|i| (total - bad - i) as f64 / (total - i) as f64).product();
    1.0 - miss
}
