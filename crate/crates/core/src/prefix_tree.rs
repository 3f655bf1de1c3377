//! Chronological Merkle prefix tree.
//!
//! Keys are `time ‖ type_1 ‖ … ‖ type_m` bit strings with fixed per-attribute
//! widths. Every node on a root-to-leaf path is materialized (no path
//! compression), so a node's key is implied by its position and verifiers can
//! decide range overlap for pruned siblings without extra data.
//!
//! Hashes: leaf `H(0x02 ‖ tag ‖ φ)`, internal `H(0x03 ‖ tag ‖ h_left ‖ h_right)`
//! where `tag` is the node's last key bit (`0x00`/`0x01`, `0xff` for the root)
//! and an absent child contributes 32 zero bytes.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, Digest256};
use crate::error::TreeError;

const LEAF_PREFIX: u8 = 0x02;
const INTERNAL_PREFIX: u8 = 0x03;
const ROOT_TAG: u8 = 0xff;

pub const TIME_BITS: u8 = 32;
pub const MAX_KEY_BITS: usize = 128;

pub type Epoch = u32;

/// Bit widths of the key attributes; the first attribute is always time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLayout {
    widths: Vec<u8>,
}

impl KeyLayout {
    pub fn new(type_widths: &[u8]) -> Result<Self, TreeError> {
        let mut widths = vec![TIME_BITS];
        for &w in type_widths {
            if w == 0 || w > 32 {
                return Err(TreeError::Schema(format!("type width {w} outside 1..=32")));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().map(|&w| w as usize).sum();
        if total > MAX_KEY_BITS {
            return Err(TreeError::Schema(format!("key length {total} exceeds {MAX_KEY_BITS} bits")));
        }
        Ok(KeyLayout { widths })
    }

    pub fn key_bits(&self) -> usize {
        self.widths.iter().map(|&w| w as usize).sum()
    }

    pub fn type_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[u8] {
        &self.widths
    }

    pub fn key(&self, time: Epoch, types: &[u32]) -> Result<PrefixKey, TreeError> {
        if types.len() != self.type_count() {
            return Err(TreeError::Schema(format!(
                "expected {} type codes, got {}",
                self.type_count(),
                types.len()
            )));
        }
        let mut bits: u128 = time as u128;
        for (&code, &w) in types.iter().zip(&self.widths[1..]) {
            if w < 32 && code >= (1u32 << w) {
                return Err(TreeError::Schema(format!("type code {code} does not fit {w} bits")));
            }
            bits = (bits << w) | code as u128;
        }
        Ok(PrefixKey { bits, len: self.key_bits() as u8 })
    }

    /// Whether the node whose key is the first `depth` bits of `prefix`
    /// can reach any key inside `spec`.
    pub fn overlaps(&self, spec: &RangeSpec, depth: usize, prefix: u128) -> bool {
        let mut offset = 0usize;
        for (attr, &w) in self.widths.iter().enumerate() {
            let w = w as usize;
            let (min, max) = spec.bounds(attr);
            let fixed = depth.saturating_sub(offset).min(w);
            let free = w - fixed;
            let lo: u64 = if fixed == 0 {
                0
            } else {
                // bits [offset, offset+fixed) of the depth-bit prefix
                let shift = depth - offset - fixed;
                let v = (prefix >> shift) & ((1u128 << fixed) - 1);
                (v as u64) << free
            };
            let hi = lo | ((1u64 << free) - 1);
            if hi < min as u64 || lo > max as u64 {
                return false;
            }
            offset += w;
        }
        true
    }

    /// Smallest epoch reachable below the node at `depth` with key `prefix`.
    pub fn min_time(&self, depth: usize, prefix: u128) -> Epoch {
        let fixed = depth.min(TIME_BITS as usize);
        if fixed == 0 {
            return 0;
        }
        let v = (prefix >> (depth - fixed)) as u64 & ((1u64 << fixed) - 1);
        (v << (TIME_BITS as usize - fixed)) as Epoch
    }
}

/// Complete key of a prefix-tree leaf, right-aligned in `bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrefixKey {
    pub bits: u128,
    pub len: u8,
}

impl PrefixKey {
    /// Bit `i`, counted from the most significant (first) bit.
    pub fn bit(&self, i: usize) -> u8 {
        ((self.bits >> (self.len as usize - 1 - i)) & 1) as u8
    }

    pub fn time(&self) -> Epoch {
        (self.bits >> (self.len as usize - TIME_BITS as usize)) as Epoch
    }

    /// Type codes, given the layout that produced the key.
    pub fn types(&self, layout: &KeyLayout) -> Vec<u32> {
        let mut out = Vec::with_capacity(layout.type_count());
        let mut rest = self.len as usize - TIME_BITS as usize;
        for &w in &layout.widths[1..] {
            rest -= w as usize;
            out.push(((self.bits >> rest) & ((1u128 << w) - 1)) as u32);
        }
        out
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len as usize).map(|i| if self.bit(i) == 1 { '1' } else { '0' }).collect()
    }
}

/// Query rectangle over time and type codes, inclusive bounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub t_min: Epoch,
    pub t_max: Epoch,
    pub types: Vec<(u32, u32)>,
}

impl RangeSpec {
    pub fn new(t_min: Epoch, t_max: Epoch, types: Vec<(u32, u32)>) -> Result<Self, TreeError> {
        if t_min > t_max || types.iter().any(|(a, b)| a > b) {
            return Err(TreeError::Schema("range minimum above maximum".into()));
        }
        Ok(RangeSpec { t_min, t_max, types })
    }

    /// Every type code in `[t_min, t_max]`.
    pub fn all_types(layout: &KeyLayout, t_min: Epoch, t_max: Epoch) -> Self {
        let types = layout.widths[1..]
            .iter()
            .map(|&w| (0, if w == 32 { u32::MAX } else { (1u32 << w) - 1 }))
            .collect();
        RangeSpec { t_min, t_max, types }
    }

    /// The single key `(time, types)`.
    pub fn point(time: Epoch, types: &[u32]) -> Self {
        RangeSpec { t_min: time, t_max: time, types: types.iter().map(|&c| (c, c)).collect() }
    }

    fn bounds(&self, attr: usize) -> (u32, u32) {
        if attr == 0 {
            (self.t_min, self.t_max)
        } else {
            self.types.get(attr - 1).copied().unwrap_or((0, u32::MAX))
        }
    }

    pub fn contains(&self, key: &PrefixKey, layout: &KeyLayout) -> bool {
        layout.overlaps(self, key.len as usize, key.bits)
    }

    pub fn validate(&self, layout: &KeyLayout) -> Result<(), TreeError> {
        if self.types.len() != layout.type_count() {
            return Err(TreeError::Schema(format!(
                "range has {} type bounds, layout has {}",
                self.types.len(),
                layout.type_count()
            )));
        }
        if self.t_min > self.t_max || self.types.iter().any(|(a, b)| a > b) {
            return Err(TreeError::Schema("range minimum above maximum".into()));
        }
        Ok(())
    }
}

pub fn leaf_hash(tag: u8, value: &Digest256) -> Digest256 {
    hash_parts([&[LEAF_PREFIX, tag][..], value.as_bytes()])
}

pub fn internal_hash(tag: u8, left: &Digest256, right: &Digest256) -> Digest256 {
    hash_parts([&[INTERNAL_PREFIX, tag][..], left.as_bytes(), right.as_bytes()])
}

fn tag_for(depth: usize, prefix: u128) -> u8 {
    if depth == 0 {
        ROOT_TAG
    } else {
        (prefix & 1) as u8
    }
}

/// Digest of a tree with no leaves.
pub fn empty_digest() -> Digest256 {
    internal_hash(ROOT_TAG, &Digest256::ZERO, &Digest256::ZERO)
}

#[derive(Clone, Debug)]
struct Node {
    children: [Option<u32>; 2],
    hash: Digest256,
    min_time: Epoch,
    max_time: Epoch,
    value: Option<Digest256>,
}

impl Node {
    fn new() -> Self {
        Node {
            children: [None, None],
            hash: Digest256::ZERO,
            min_time: Epoch::MAX,
            max_time: 0,
            value: None,
        }
    }
}

/// In-memory prefix tree. Leaves hold sum-tree root hashes.
#[derive(Clone, Debug)]
pub struct PrefixTree {
    layout: KeyLayout,
    nodes: Vec<Node>,
    leaf_count: usize,
    latest_time: Option<Epoch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixInclusionProof {
    /// Bit `d` set when the sibling at depth `d + 1` is present.
    pub present: Vec<u8>,
    /// Hashes of present siblings, root side first.
    pub siblings: Vec<Digest256>,
}

/// Pruned view of the tree produced by the range-cover walk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverNode {
    /// Subtree outside the range (or absent, with a zero hash).
    Pruned(Digest256),
    /// Leaf inside the range with its stored value.
    Leaf(Digest256),
    Branch(Box<CoverNode>, Box<CoverNode>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeCoverProof {
    pub root: CoverNode,
}

/// A covered leaf recovered by verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoveredLeaf {
    pub key: PrefixKey,
    pub value: Digest256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoverRejection {
    RootNotExpanded,
    HiddenOverlap,
    ExpandedOutsideRange,
    MisplacedLeaf,
    DigestMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtensionNode {
    Empty,
    /// Frontier subtree already present at the older epoch.
    Old(Digest256),
    /// Leaf appended after the older epoch.
    New(Digest256),
    Branch(Box<ExtensionNode>, Box<ExtensionNode>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionProof {
    /// `None` extends the empty tree that precedes epoch 0.
    pub t_old: Option<Epoch>,
    pub t_new: Epoch,
    pub root: ExtensionNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtensionRejection {
    /// The proof is for a different pair of epochs.
    EpochMismatch,
    EpochOrder,
    Malformed,
    NewLeafOutsideWindow,
    FrontierAfterOldEpoch,
    OldDigestMismatch,
    NewDigestMismatch,
}

impl PrefixTree {
    pub fn new(layout: KeyLayout) -> Self {
        let mut root = Node::new();
        root.hash = empty_digest();
        PrefixTree { layout, nodes: vec![root], leaf_count: 0, latest_time: None }
    }

    pub fn layout(&self) -> &KeyLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.leaf_count
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_count == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn latest_time(&self) -> Option<Epoch> {
        self.latest_time
    }

    pub fn digest(&self) -> Digest256 {
        self.nodes[0].hash
    }

    fn check_key(&self, key: &PrefixKey) -> Result<(), TreeError> {
        let expected = self.layout.key_bits();
        if key.len as usize != expected {
            return Err(TreeError::KeyLength { expected, got: key.len as usize });
        }
        Ok(())
    }

    /// Indices of the nodes on the path to `key`, root first; stops early if absent.
    fn path(&self, key: &PrefixKey) -> Vec<u32> {
        let mut out = vec![0u32];
        let mut cur = 0u32;
        for i in 0..key.len as usize {
            match self.nodes[cur as usize].children[key.bit(i) as usize] {
                Some(c) => {
                    out.push(c);
                    cur = c;
                }
                None => break,
            }
        }
        out
    }

    pub fn get(&self, key: &PrefixKey) -> Option<Digest256> {
        if self.check_key(key).is_err() {
            return None;
        }
        let path = self.path(key);
        if path.len() == key.len as usize + 1 {
            self.nodes[*path.last().unwrap() as usize].value
        } else {
            None
        }
    }

    pub fn insert(&mut self, key: PrefixKey, value: Digest256) -> Result<(), TreeError> {
        self.check_key(&key)?;
        let time = key.time();
        if let Some(latest) = self.latest_time {
            if time < latest {
                return Err(TreeError::TimeRegression { latest, new: time });
            }
        }
        if self.get(&key).is_some() {
            return Err(TreeError::DuplicateKey);
        }
        let mut path = vec![0u32];
        let mut cur = 0usize;
        for i in 0..key.len as usize {
            let b = key.bit(i) as usize;
            let next = match self.nodes[cur].children[b] {
                Some(c) => c as usize,
                None => {
                    self.nodes.push(Node::new());
                    let idx = self.nodes.len() - 1;
                    self.nodes[cur].children[b] = Some(idx as u32);
                    idx
                }
            };
            path.push(next as u32);
            cur = next;
        }
        self.nodes[cur].value = Some(value);
        for &idx in &path {
            let n = &mut self.nodes[idx as usize];
            n.min_time = n.min_time.min(time);
            n.max_time = n.max_time.max(time);
        }
        self.rehash_path(&key, &path);
        self.leaf_count += 1;
        self.latest_time = Some(time);
        Ok(())
    }

    fn rehash_path(&mut self, key: &PrefixKey, path: &[u32]) {
        let depth_max = key.len as usize;
        for depth in (0..=depth_max).rev() {
            let idx = path[depth] as usize;
            let prefix = if depth == 0 { 0 } else { key.bits >> (depth_max - depth) };
            let tag = tag_for(depth, prefix);
            let h = if depth == depth_max {
                leaf_hash(tag, self.nodes[idx].value.as_ref().unwrap())
            } else {
                let [l, r] = self.nodes[idx].children;
                internal_hash(tag, &self.child_hash(l), &self.child_hash(r))
            };
            self.nodes[idx].hash = h;
        }
    }

    fn child_hash(&self, c: Option<u32>) -> Digest256 {
        c.map(|i| self.nodes[i as usize].hash).unwrap_or(Digest256::ZERO)
    }

    /// Replaces a stored leaf value in place, bypassing the append-only rule.
    /// Exists to build tampered fixtures; an honest server never calls it.
    #[doc(hidden)]
    pub fn overwrite_leaf_unchecked(&mut self, key: &PrefixKey, value: Digest256) -> Result<(), TreeError> {
        self.check_key(key)?;
        let path = self.path(key);
        if path.len() != key.len as usize + 1 {
            return Err(TreeError::KeyAbsent);
        }
        let leaf = *path.last().unwrap() as usize;
        self.nodes[leaf].value = Some(value);
        self.rehash_path(key, &path);
        Ok(())
    }

    /// Hash of the subtree at `idx` restricted to leaves with time `<= epoch`;
    /// zero if no such leaf exists.
    fn hash_at(&self, idx: usize, depth: usize, prefix: u128, epoch: Epoch) -> Digest256 {
        let n = &self.nodes[idx];
        if n.min_time > epoch {
            return Digest256::ZERO;
        }
        if n.max_time <= epoch {
            return n.hash;
        }
        let [l, r] = n.children;
        let hl = l.map_or(Digest256::ZERO, |c| self.hash_at(c as usize, depth + 1, prefix << 1, epoch));
        let hr = r.map_or(Digest256::ZERO, |c| self.hash_at(c as usize, depth + 1, (prefix << 1) | 1, epoch));
        internal_hash(tag_for(depth, prefix), &hl, &hr)
    }

    /// Digest of the tree as it stood after `epoch` was inserted.
    pub fn digest_at(&self, epoch: Epoch) -> Digest256 {
        let root = &self.nodes[0];
        if root.min_time > epoch || self.is_empty() {
            return empty_digest();
        }
        self.hash_at(0, 0, 0, epoch)
    }

    pub fn inclusion_proof(&self, key: &PrefixKey) -> Result<PrefixInclusionProof, TreeError> {
        self.inclusion_proof_at(key, key.time())
    }

    /// Co-path for `key` in the tree as of `epoch`.
    pub fn inclusion_proof_at(&self, key: &PrefixKey, epoch: Epoch) -> Result<PrefixInclusionProof, TreeError> {
        self.check_key(key)?;
        if key.time() > epoch {
            return Err(TreeError::KeyAbsent);
        }
        let path = self.path(key);
        let len = key.len as usize;
        if path.len() != len + 1 {
            return Err(TreeError::KeyAbsent);
        }
        let mut present = vec![0u8; len.div_ceil(8)];
        let mut siblings = Vec::new();
        for depth in 1..=len {
            let parent = path[depth - 1] as usize;
            let b = key.bit(depth - 1) as usize;
            let prefix = (key.bits >> (len - depth)) ^ 1;
            let h = self.nodes[parent].children[1 - b]
                .map_or(Digest256::ZERO, |s| self.hash_at(s as usize, depth, prefix, epoch));
            if !h.is_zero() {
                present[(depth - 1) / 8] |= 1 << ((depth - 1) % 8);
                siblings.push(h);
            }
        }
        Ok(PrefixInclusionProof { present, siblings })
    }

    /// Range cover over the tree as of `epoch`: every node overlapping `spec`
    /// is expanded, every other node is pruned to its hash.
    pub fn range_cover(&self, spec: &RangeSpec, epoch: Epoch) -> RangeCoverProof {
        RangeCoverProof { root: self.cover_node(Some(0), 0, 0, spec, epoch) }
    }

    fn cover_node(&self, idx: Option<u32>, depth: usize, prefix: u128, spec: &RangeSpec, epoch: Epoch) -> CoverNode {
        let present = idx.filter(|&i| self.nodes[i as usize].min_time <= epoch || depth == 0);
        let Some(i) = present else {
            return CoverNode::Pruned(Digest256::ZERO);
        };
        let i = i as usize;
        if depth > 0 && !self.layout.overlaps(spec, depth, prefix) {
            return CoverNode::Pruned(self.hash_at(i, depth, prefix, epoch));
        }
        if depth == self.layout.key_bits() {
            return CoverNode::Leaf(self.nodes[i].value.expect("leaf-depth node holds a value"));
        }
        let [l, r] = self.nodes[i].children;
        CoverNode::Branch(
            Box::new(self.cover_node(l, depth + 1, prefix << 1, spec, epoch)),
            Box::new(self.cover_node(r, depth + 1, (prefix << 1) | 1, spec, epoch)),
        )
    }

    /// Leaves of the tree as of `epoch` whose keys lie in `spec`, in key order.
    pub fn covered_leaves(&self, spec: &RangeSpec, epoch: Epoch) -> Vec<CoveredLeaf> {
        let mut out = Vec::new();
        self.collect_leaves(0, 0, 0, epoch, &mut |depth, prefix| self.layout.overlaps(spec, depth, prefix), &mut out);
        out
    }

    /// All leaves with time in `(after, upto]`, in key order.
    pub fn leaves_between(&self, after: Option<Epoch>, upto: Epoch) -> Vec<CoveredLeaf> {
        let mut out = Vec::new();
        self.collect_leaves(0, 0, 0, upto, &mut |_, _| true, &mut out);
        out.retain(|l| after.is_none_or(|a| l.key.time() > a));
        out
    }

    fn collect_leaves(
        &self,
        idx: usize,
        depth: usize,
        prefix: u128,
        epoch: Epoch,
        keep: &mut dyn FnMut(usize, u128) -> bool,
        out: &mut Vec<CoveredLeaf>,
    ) {
        let n = &self.nodes[idx];
        if n.min_time > epoch || (depth > 0 && !keep(depth, prefix)) {
            return;
        }
        if let Some(v) = n.value {
            out.push(CoveredLeaf { key: PrefixKey { bits: prefix, len: depth as u8 }, value: v });
            return;
        }
        for (b, c) in n.children.iter().enumerate() {
            if let Some(c) = c {
                self.collect_leaves(*c as usize, depth + 1, (prefix << 1) | b as u128, epoch, keep, out);
            }
        }
    }

    /// Proof that the tree at `t_new` extends the tree at `t_old`
    /// (`None`: the empty tree before epoch 0).
    pub fn extension_proof(&self, t_old: Option<Epoch>, t_new: Epoch) -> Result<ExtensionProof, TreeError> {
        if let Some(o) = t_old.filter(|&o| o > t_new) {
            return Err(TreeError::UnknownEpoch(o));
        }
        let [l, r] = self.nodes[0].children;
        let root = ExtensionNode::Branch(
            Box::new(self.extension_node(l, t_old, t_new)),
            Box::new(self.extension_node(r, t_old, t_new)),
        );
        Ok(ExtensionProof { t_old, t_new, root })
    }

    fn extension_node(&self, idx: Option<u32>, t_old: Option<Epoch>, t_new: Epoch) -> ExtensionNode {
        let Some(i) = idx else {
            return ExtensionNode::Empty;
        };
        let n = &self.nodes[i as usize];
        if n.min_time > t_new {
            ExtensionNode::Empty
        } else if t_old.is_some_and(|o| n.max_time <= o) {
            ExtensionNode::Old(n.hash)
        } else if let Some(v) = n.value {
            ExtensionNode::New(v)
        } else {
            let [l, r] = n.children;
            ExtensionNode::Branch(
                Box::new(self.extension_node(l, t_old, t_new)),
                Box::new(self.extension_node(r, t_old, t_new)),
            )
        }
    }
}

/// Rebuilds the digest from a leaf value and its co-path.
pub fn verify_inclusion(
    layout: &KeyLayout,
    key: &PrefixKey,
    value: &Digest256,
    proof: &PrefixInclusionProof,
    digest: &Digest256,
) -> bool {
    let len = layout.key_bits();
    if key.len as usize != len || proof.present.len() != len.div_ceil(8) {
        return false;
    }
    let count = proof.present.iter().map(|b| b.count_ones() as usize).sum::<usize>();
    if count != proof.siblings.len() || proof.siblings.iter().any(Digest256::is_zero) {
        return false;
    }
    // Padding bits past the key length must be clear.
    if !len.is_multiple_of(8) && proof.present[len / 8] >> (len % 8) != 0 {
        return false;
    }
    let mut next = proof.siblings.len();
    let mut cur = leaf_hash(key.bit(len - 1), value);
    for depth in (1..=len).rev() {
        let sib = if proof.present[(depth - 1) / 8] & (1 << ((depth - 1) % 8)) != 0 {
            next -= 1;
            proof.siblings[next]
        } else {
            Digest256::ZERO
        };
        let parent_depth = depth - 1;
        let tag = if parent_depth == 0 { ROOT_TAG } else { key.bit(parent_depth - 1) };
        cur = if key.bit(depth - 1) == 0 {
            internal_hash(tag, &cur, &sib)
        } else {
            internal_hash(tag, &sib, &cur)
        };
    }
    cur == *digest
}

/// Checks a range cover against `digest` and returns the covered leaves.
pub fn verify_range_cover(
    layout: &KeyLayout,
    spec: &RangeSpec,
    proof: &RangeCoverProof,
    digest: &Digest256,
) -> Result<Vec<CoveredLeaf>, CoverRejection> {
    if !matches!(proof.root, CoverNode::Branch(..)) {
        return Err(CoverRejection::RootNotExpanded);
    }
    let mut leaves = Vec::new();
    let root = cover_hash(layout, spec, &proof.root, 0, 0, &mut leaves)?;
    if root != *digest {
        return Err(CoverRejection::DigestMismatch);
    }
    Ok(leaves)
}

fn cover_hash(
    layout: &KeyLayout,
    spec: &RangeSpec,
    node: &CoverNode,
    depth: usize,
    prefix: u128,
    leaves: &mut Vec<CoveredLeaf>,
) -> Result<Digest256, CoverRejection> {
    let len = layout.key_bits();
    let overlaps = depth == 0 || layout.overlaps(spec, depth, prefix);
    let tag = tag_for(depth, prefix);
    match node {
        CoverNode::Pruned(h) => {
            if overlaps && !h.is_zero() {
                return Err(CoverRejection::HiddenOverlap);
            }
            Ok(*h)
        }
        CoverNode::Leaf(v) => {
            if depth != len {
                return Err(CoverRejection::MisplacedLeaf);
            }
            if !overlaps {
                return Err(CoverRejection::ExpandedOutsideRange);
            }
            leaves.push(CoveredLeaf { key: PrefixKey { bits: prefix, len: len as u8 }, value: *v });
            Ok(leaf_hash(tag, v))
        }
        CoverNode::Branch(l, r) => {
            if depth >= len {
                return Err(CoverRejection::MisplacedLeaf);
            }
            if !overlaps {
                return Err(CoverRejection::ExpandedOutsideRange);
            }
            let hl = cover_hash(layout, spec, l, depth + 1, prefix << 1, leaves)?;
            let hr = cover_hash(layout, spec, r, depth + 1, (prefix << 1) | 1, leaves)?;
            if depth > 0 && hl.is_zero() && hr.is_zero() {
                // an empty subtree is always encoded as a zero pruned node
                return Err(CoverRejection::MisplacedLeaf);
            }
            Ok(internal_hash(tag, &hl, &hr))
        }
    }
}

/// Checks that `proof` extends epoch `t_old` to `t_new` under their
/// published digests and returns the appended leaves.
pub fn verify_extension(
    layout: &KeyLayout,
    proof: &ExtensionProof,
    t_old: Option<Epoch>,
    t_new: Epoch,
    old_digest: &Digest256,
    new_digest: &Digest256,
) -> Result<Vec<CoveredLeaf>, ExtensionRejection> {
    if proof.t_old != t_old || proof.t_new != t_new {
        return Err(ExtensionRejection::EpochMismatch);
    }
    if proof.t_old.is_some_and(|o| o > proof.t_new) {
        return Err(ExtensionRejection::EpochOrder);
    }
    let ExtensionNode::Branch(l, r) = &proof.root else {
        return Err(ExtensionRejection::Malformed);
    };
    let mut leaves = Vec::new();
    let (ol, nl) = extension_hashes(layout, proof, l, 1, 0, &mut leaves)?;
    let (or, nr) = extension_hashes(layout, proof, r, 1, 1, &mut leaves)?;
    if internal_hash(ROOT_TAG, &ol, &or) != *old_digest {
        return Err(ExtensionRejection::OldDigestMismatch);
    }
    if internal_hash(ROOT_TAG, &nl, &nr) != *new_digest {
        return Err(ExtensionRejection::NewDigestMismatch);
    }
    Ok(leaves)
}

fn extension_hashes(
    layout: &KeyLayout,
    proof: &ExtensionProof,
    node: &ExtensionNode,
    depth: usize,
    prefix: u128,
    leaves: &mut Vec<CoveredLeaf>,
) -> Result<(Digest256, Digest256), ExtensionRejection> {
    let len = layout.key_bits();
    let tag = tag_for(depth, prefix);
    match node {
        ExtensionNode::Empty => Ok((Digest256::ZERO, Digest256::ZERO)),
        ExtensionNode::Old(h) => {
            if h.is_zero() {
                return Err(ExtensionRejection::Malformed);
            }
            if proof.t_old.is_none_or(|o| layout.min_time(depth, prefix) > o) {
                return Err(ExtensionRejection::FrontierAfterOldEpoch);
            }
            Ok((*h, *h))
        }
        ExtensionNode::New(v) => {
            if depth != len {
                return Err(ExtensionRejection::Malformed);
            }
            let key = PrefixKey { bits: prefix, len: len as u8 };
            let t = key.time();
            if proof.t_old.is_some_and(|o| t <= o) || t > proof.t_new {
                return Err(ExtensionRejection::NewLeafOutsideWindow);
            }
            leaves.push(CoveredLeaf { key, value: *v });
            Ok((Digest256::ZERO, leaf_hash(tag, v)))
        }
        ExtensionNode::Branch(l, r) => {
            if depth >= len {
                return Err(ExtensionRejection::Malformed);
            }
            let (ol, nl) = extension_hashes(layout, proof, l, depth + 1, prefix << 1, leaves)?;
            let (or, nr) = extension_hashes(layout, proof, r, depth + 1, (prefix << 1) | 1, leaves)?;
            let combine = |a: &Digest256, b: &Digest256| {
                if a.is_zero() && b.is_zero() {
                    Digest256::ZERO
                } else {
                    internal_hash(tag, a, b)
                }
            };
            let new = combine(&nl, &nr);
            if new.is_zero() {
                return Err(ExtensionRejection::Malformed);
            }
            Ok((combine(&ol, &or), new))
        }
    }
}
