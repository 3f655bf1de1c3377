//! Per-bucket Merkle sum tree over value-sorted rows.
//!
//! Each leaf carries Pedersen commitments to `v, v^2, …, v^z` and a hash of
//! the row's user id and time. Internal nodes add their children's
//! commitments and leaf counts, so the root commits to every power sum and a
//! co-path reveals how many leaves lie on either side of a leaf.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::crypto::{commit_u128, hash, hash_parts, Commitment, Digest256, Scalar};
use crate::error::TreeError;

pub const MAX_POWERS: usize = 4;
const LEAF_PREFIX: u8 = 0x00;
const INTERNAL_PREFIX: u8 = 0x01;
/// Longest co-path a verifier will walk (2^64 leaves).
const MAX_DEPTH: usize = 64;

/// `H(len(user) ‖ user ‖ time)`; binds a leaf to one user at one time.
pub fn id_hash(user: &str, time: u32) -> Digest256 {
    hash_parts([
        &(user.len() as u32).to_be_bytes()[..],
        user.as_bytes(),
        &time.to_be_bytes(),
    ])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumLeaf {
    pub commitments: Vec<Commitment>,
    pub id_hash: Digest256,
}

impl SumLeaf {
    pub fn hash(&self) -> Digest256 {
        let mut buf = Vec::with_capacity(1 + 32 * (self.commitments.len() + 1));
        buf.push(LEAF_PREFIX);
        for c in &self.commitments {
            buf.extend_from_slice(c.as_bytes());
        }
        buf.extend_from_slice(self.id_hash.as_bytes());
        hash(&buf)
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary { hash: self.hash(), commitments: self.commitments.clone(), count: 1 }
    }
}

/// Hash, commitment sums and leaf count of a subtree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub hash: Digest256,
    pub commitments: Vec<Commitment>,
    pub count: u64,
}

impl NodeSummary {
    pub fn empty(z: usize) -> Self {
        NodeSummary { hash: hash(&[LEAF_PREFIX]), commitments: vec![Commitment::identity(); z], count: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn combine(left: &NodeSummary, right: &NodeSummary) -> NodeSummary {
        if left.is_empty() && right.is_empty() {
            return left.clone();
        }
        let commitments: Vec<_> =
            left.commitments.iter().zip(&right.commitments).map(|(a, b)| *a + *b).collect();
        let count = left.count + right.count;
        NodeSummary { hash: internal_hash(&left.hash, &right.hash, &commitments, count), commitments, count }
    }
}

pub fn internal_hash(left: &Digest256, right: &Digest256, commitments: &[Commitment], count: u64) -> Digest256 {
    let mut buf = Vec::with_capacity(1 + 64 + 32 * commitments.len() + 8);
    buf.push(INTERNAL_PREFIX);
    buf.extend_from_slice(left.as_bytes());
    buf.extend_from_slice(right.as_bytes());
    for c in commitments {
        buf.extend_from_slice(c.as_bytes());
    }
    buf.extend_from_slice(&count.to_be_bytes());
    hash(&buf)
}

/// The root node's preimage, enough to recompute the bucket's `φ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootOpening {
    Leaf(SumLeaf),
    Internal { left: Digest256, right: Digest256, commitments: Vec<Commitment>, count: u64 },
}

impl RootOpening {
    /// Recomputes the root summary; `None` if the opening is malformed.
    pub fn summary(&self, z: usize) -> Option<NodeSummary> {
        match self {
            RootOpening::Leaf(leaf) => (leaf.commitments.len() == z).then(|| leaf.summary()),
            RootOpening::Internal { left, right, commitments, count } => {
                if commitments.len() != z || *count < 2 {
                    return None;
                }
                Some(NodeSummary {
                    hash: internal_hash(left, right, commitments, *count),
                    commitments: commitments.clone(),
                    count: *count,
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sibling {
    Empty,
    Node(NodeSummary),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoPathEntry {
    pub side: Side,
    pub sibling: Sibling,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumInclusionProof {
    pub leaf: SumLeaf,
    /// Siblings from the leaf level upwards.
    pub co_path: Vec<CoPathEntry>,
}

/// What a verified co-path establishes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InclusionFacts {
    pub root: NodeSummary,
    /// Leaves strictly left of the proven leaf.
    pub left_count: u64,
    /// Leaves strictly right of the proven leaf.
    pub right_count: u64,
}

/// Walks a co-path and checks it ends at `root_hash`.
pub fn verify_inclusion(proof: &SumInclusionProof, z: usize, root_hash: &Digest256) -> Option<InclusionFacts> {
    walk_co_path(proof, z).filter(|f| f.root.hash == *root_hash)
}

/// Recomputes the root a co-path leads to, rejecting malformed paths.
pub fn walk_co_path(proof: &SumInclusionProof, z: usize) -> Option<InclusionFacts> {
    if proof.leaf.commitments.len() != z || proof.co_path.len() > MAX_DEPTH {
        return None;
    }
    let mut cur = proof.leaf.summary();
    let (mut left_count, mut right_count) = (0u64, 0u64);
    for entry in &proof.co_path {
        let sib = match &entry.sibling {
            // padding only ever sits to the right of real leaves
            Sibling::Empty if entry.side == Side::Right => NodeSummary::empty(z),
            Sibling::Empty => return None,
            Sibling::Node(n) => {
                if n.count == 0 || n.commitments.len() != z {
                    return None;
                }
                n.clone()
            }
        };
        match entry.side {
            Side::Left => {
                left_count = left_count.checked_add(sib.count)?;
                cur = NodeSummary::combine(&sib, &cur);
            }
            Side::Right => {
                right_count = right_count.checked_add(sib.count)?;
                cur = NodeSummary::combine(&cur, &sib);
            }
        }
    }
    Some(InclusionFacts { root: cur, left_count, right_count })
}

/// Root summary of the tree built from `leaves` in the given order.
pub fn root_from_leaves(leaves: &[SumLeaf], z: usize) -> NodeSummary {
    let mut level: Vec<NodeSummary> = leaves.iter().map(SumLeaf::summary).collect();
    if level.is_empty() {
        return NodeSummary::empty(z);
    }
    level.resize(leaves.len().next_power_of_two(), NodeSummary::empty(z));
    while level.len() > 1 {
        level = level.chunks(2).map(|p| NodeSummary::combine(&p[0], &p[1])).collect();
    }
    level.pop().unwrap()
}

/// Prover-side row: the value and its seed, shared by every power.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SumEntry {
    pub value: u64,
    pub seed: Scalar,
    pub id_hash: Digest256,
}

impl SumEntry {
    pub fn leaf(&self, z: usize) -> SumLeaf {
        let commitments = (1..=z).map(|j| commit_u128(power(self.value, j), &self.seed)).collect();
        SumLeaf { commitments, id_hash: self.id_hash }
    }
}

fn power(v: u64, j: usize) -> u128 {
    (v as u128).pow(j as u32)
}

#[derive(Clone, Debug)]
pub struct SumTree {
    z: usize,
    entries: Vec<SumEntry>,
    levels: Vec<Vec<NodeSummary>>,
    leaves: Vec<SumLeaf>,
}

impl SumTree {
    /// Sorts entries by `(value, id_hash)` and builds the tree.
    pub fn build(mut entries: Vec<SumEntry>, z: usize) -> Result<Self, TreeError> {
        entries.sort_by(|a, b| (a.value, a.id_hash.as_bytes()).cmp(&(b.value, b.id_hash.as_bytes())));
        Self::from_ordered(entries, z)
    }

    /// Builds the tree over `entries` in exactly the given order. An honest
    /// server always goes through [`SumTree::build`].
    #[doc(hidden)]
    pub fn from_ordered(entries: Vec<SumEntry>, z: usize) -> Result<Self, TreeError> {
        if z == 0 || z > MAX_POWERS {
            return Err(TreeError::Schema(format!("power count {z} outside 1..={MAX_POWERS}")));
        }
        if entries.is_empty() {
            return Err(TreeError::EmptyBucket);
        }
        for e in &entries {
            if e.value >= crate::crypto::VALUE_DOMAIN {
                return Err(TreeError::ValueOutOfRange(e.value));
            }
        }
        let leaves: Vec<SumLeaf> = entries.iter().map(|e| e.leaf(z)).collect();
        let mut level: Vec<NodeSummary> = leaves.iter().map(SumLeaf::summary).collect();
        level.resize(entries.len().next_power_of_two(), NodeSummary::empty(z));
        let mut levels = vec![level];
        while levels.last().unwrap().len() > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks(2)
                .map(|p| NodeSummary::combine(&p[0], &p[1]))
                .collect();
            levels.push(next);
        }
        Ok(SumTree { z, entries, levels, leaves })
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SumEntry] {
        &self.entries
    }

    pub fn leaves(&self) -> &[SumLeaf] {
        &self.leaves
    }

    pub fn root(&self) -> &NodeSummary {
        &self.levels.last().unwrap()[0]
    }

    pub fn root_hash(&self) -> Digest256 {
        self.root().hash
    }

    pub fn root_opening(&self) -> RootOpening {
        if self.levels.len() == 1 {
            return RootOpening::Leaf(self.leaves[0].clone());
        }
        let below = &self.levels[self.levels.len() - 2];
        let root = self.root();
        RootOpening::Internal {
            left: below[0].hash,
            right: below[1].hash,
            commitments: root.commitments.clone(),
            count: root.count,
        }
    }

    pub fn position_of(&self, id_hash: &Digest256) -> Option<usize> {
        self.entries.iter().position(|e| e.id_hash == *id_hash)
    }

    pub fn inclusion_proof(&self, index: usize) -> Result<SumInclusionProof, TreeError> {
        if index >= self.entries.len() {
            return Err(TreeError::IndexOutOfBounds { index, len: self.entries.len() });
        }
        let mut idx = index;
        let mut co_path = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = &level[idx ^ 1];
            let side = if idx.is_multiple_of(2) { Side::Right } else { Side::Left };
            let sibling = if sib.is_empty() { Sibling::Empty } else { Sibling::Node(sib.clone()) };
            co_path.push(CoPathEntry { side, sibling });
            idx /= 2;
        }
        Ok(SumInclusionProof { leaf: self.leaves[index].clone(), co_path })
    }

    /// Index of the first leaf with value `>= v`.
    pub fn leftmost_geq(&self, v: u64) -> Option<usize> {
        let i = self.entries.partition_point(|e| e.value < v);
        (i < self.entries.len()).then_some(i)
    }

    /// Index of the last leaf with value `<= v`.
    pub fn rightmost_leq(&self, v: u64) -> Option<usize> {
        self.entries.partition_point(|e| e.value <= v).checked_sub(1)
    }

    /// `Σ v^j` for `j = 1..=z`.
    pub fn power_sums(&self) -> Vec<BigUint> {
        (1..=self.z)
            .map(|j| self.entries.iter().map(|e| BigUint::from(power(e.value, j))).sum())
            .collect()
    }

    /// `Σ r` over all leaves.
    pub fn total_seed(&self) -> Scalar {
        self.entries.iter().map(|e| e.seed).sum()
    }
}

/// Reduces a non-negative integer below the group order to a scalar;
/// `None` if it does not fit canonically.
pub fn scalar_from_biguint(v: &BigUint) -> Option<Scalar> {
    let bytes = v.to_bytes_be();
    if bytes.len() > 32 {
        return None;
    }
    let mut buf = [0u8; 32];
    buf[32 - bytes.len()..].copy_from_slice(&bytes);
    Scalar::from_be_bytes(&buf).ok()
}
