//! The data service: owns rows, secret key, authenticated structures and the
//! bulletin handle, and answers every query with a proof.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hmac::{Hmac, Mac};
use num_bigint::BigUint;
use rand::{CryptoRng, RngCore, SeedableRng};
use sha2::Sha256;

use crate::bulletin::{Bulletin, FileBulletin};
use crate::crypto::{prove_range, Digest256, Scalar, VALUE_DOMAIN};
use crate::error::{ServerError, TreeError};
use crate::prefix_tree::{Epoch, KeyLayout, PrefixKey, PrefixTree, RangeSpec};
use crate::proofs::{
    AggregateProof, AuditProof, BucketAudit, Extreme, LookupProof, MinMaxProof, NoisySumProof, ProvenLeaf,
    Quantile, QuantileEntry, QuantileProof,
};
use crate::schema::Schema;
use crate::store::{Row, RowStore, StoredRow};
use crate::sum_tree::{id_hash, SumEntry, SumTree};

const SCHEMA_FILE: &str = "schema.toml";
const KEY_FILE: &str = "secret.key";
const ROWS_FILE: &str = "rows.log";
const BULLETIN_FILE: &str = "bulletin.log";

/// Server secret `k_s`, the PRF key for per-row seeds.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        SecretKey(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SecretKey(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ServerError> {
        let v = hex::decode(s.trim()).map_err(|e| ServerError::Schema(format!("secret key: {e}")))?;
        let bytes: [u8; 32] = v.try_into().map_err(|_| ServerError::Schema("secret key must be 32 bytes".into()))?;
        Ok(SecretKey(bytes))
    }

    /// `PRF(k_s, user ‖ t)` reduced to a scalar: two HMAC-SHA256 blocks, wide reduction.
    pub fn epoch_secret(&self, user: &str, time: Epoch) -> Scalar {
        let mut wide = [0u8; 64];
        for (ctr, chunk) in wide.chunks_mut(32).enumerate() {
            let mut mac = Hmac::<Sha256>::new_from_slice(&self.0).expect("hmac takes any key length");
            mac.update(b"tap.seed.v1");
            mac.update(&[ctr as u8]);
            mac.update(&(user.len() as u32).to_be_bytes());
            mac.update(user.as_bytes());
            mac.update(&time.to_be_bytes());
            chunk.copy_from_slice(&mac.finalize().into_bytes());
        }
        Scalar::from_wide_bytes(&wide)
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// Test-only misbehaviour switches; all off for an honest server.
#[derive(Clone, Copy, Debug, Default)]
struct Misbehaviour {
    swap_last_two_on_insert: bool,
}

pub struct Server {
    schema: Schema,
    layout: KeyLayout,
    key: SecretKey,
    store: RowStore,
    tree: PrefixTree,
    buckets: HashMap<PrefixKey, SumTree>,
    current: Epoch,
    bulletin: Arc<dyn Bulletin>,
    dir: Option<PathBuf>,
    misbehaviour: Misbehaviour,
}

/// Per-stage timings reported by instrumented queries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProofTimings {
    pub prefix_gen: std::time::Duration,
    pub sum_gen: std::time::Duration,
}

impl Server {
    /// Sets up a server whose epoch 0 holds `initial` (possibly empty) and
    /// publishes `δ_0`.
    pub fn initialize(
        schema: Schema,
        key: SecretKey,
        bulletin: Arc<dyn Bulletin>,
        initial: Vec<Row>,
    ) -> Result<Self, ServerError> {
        Self::with_store(schema, key, bulletin, RowStore::in_memory(), None, initial)
    }

    fn with_store(
        schema: Schema,
        key: SecretKey,
        bulletin: Arc<dyn Bulletin>,
        store: RowStore,
        dir: Option<PathBuf>,
        initial: Vec<Row>,
    ) -> Result<Self, ServerError> {
        schema.validate()?;
        let layout = schema.layout()?;
        let mut server = Server {
            tree: PrefixTree::new(layout.clone()),
            schema,
            layout,
            key,
            store,
            buckets: HashMap::new(),
            current: 0,
            bulletin,
            dir,
            misbehaviour: Misbehaviour::default(),
        };
        server.apply_epoch(0, initial)?;
        Ok(server)
    }

    /// Creates a persistent server in `dir` (schema, key, rows, bulletin log).
    pub fn create(dir: impl AsRef<Path>, schema: Schema, key: SecretKey, initial: Vec<Row>) -> Result<Self, ServerError> {
        let dir = dir.as_ref();
        schema.validate()?;
        fs::create_dir_all(dir)?;
        if dir.join(ROWS_FILE).exists() || dir.join(BULLETIN_FILE).exists() {
            return Err(ServerError::Schema(format!("{} already holds a server", dir.display())));
        }
        fs::write(dir.join(SCHEMA_FILE), schema.to_toml())?;
        fs::write(dir.join(KEY_FILE), key.to_hex())?;
        let bulletin = Arc::new(FileBulletin::open(dir.join(BULLETIN_FILE))?);
        let store = RowStore::open(dir.join(ROWS_FILE), schema.type_count())?;
        Self::with_store(schema, key, bulletin, store, Some(dir.to_path_buf()), initial)
    }

    /// Reopens a persistent server, rebuilding every epoch from the row store
    /// and checking each digest against the bulletin.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ServerError> {
        let dir = dir.as_ref();
        let schema = Schema::from_toml(&fs::read_to_string(dir.join(SCHEMA_FILE))?)?;
        let key = SecretKey::from_hex(&fs::read_to_string(dir.join(KEY_FILE))?)?;
        let bulletin = Arc::new(FileBulletin::open(dir.join(BULLETIN_FILE))?);
        let stored = RowStore::open(dir.join(ROWS_FILE), schema.type_count())?;
        let (latest, _) = bulletin
            .latest()
            .ok_or_else(|| ServerError::Schema("bulletin log is empty".into()))?;
        let layout = schema.layout()?;
        let mut server = Server {
            tree: PrefixTree::new(layout.clone()),
            schema,
            layout,
            key,
            store: RowStore::in_memory(),
            buckets: HashMap::new(),
            current: 0,
            bulletin: bulletin.clone(),
            dir: Some(dir.to_path_buf()),
            misbehaviour: Misbehaviour::default(),
        };
        let mut by_time: BTreeMap<Epoch, Vec<StoredRow>> = BTreeMap::new();
        for r in stored.rows() {
            by_time.entry(r.row.time).or_default().push(r.clone());
        }
        for t in 0..=latest as Epoch {
            let rows = by_time.remove(&t).unwrap_or_default();
            for r in &rows {
                if r.seed != server.key.epoch_secret(&r.row.user_id, t) {
                    return Err(ServerError::Schema(format!("stored seed for {} at {t} does not match key", r.row.user_id)));
                }
            }
            server.build_epoch(t, rows)?;
            server.current = t;
            if server.tree.digest() != bulletin.get(t as u64)? {
                return Err(ServerError::Schema(format!("rebuilt digest for epoch {t} differs from the bulletin")));
            }
        }
        if let Some((t, _)) = by_time.into_iter().next() {
            return Err(ServerError::Schema(format!("row store holds rows for unpublished epoch {t}")));
        }
        server.store = stored;
        Ok(server)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn layout(&self) -> &KeyLayout {
        &self.layout
    }

    pub fn current_epoch(&self) -> Epoch {
        self.current
    }

    pub fn bulletin(&self) -> &Arc<dyn Bulletin> {
        &self.bulletin
    }

    pub fn prefix_tree(&self) -> &PrefixTree {
        &self.tree
    }

    pub fn store(&self) -> &RowStore {
        &self.store
    }

    pub fn bucket(&self, time: Epoch, types: &[u32]) -> Option<&SumTree> {
        self.buckets.get(&self.layout.key(time, types).ok()?)
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Seed for `(user, t)`; handed to the user over a private channel.
    pub fn epoch_secret(&self, user: &str, time: Epoch) -> Scalar {
        self.key.epoch_secret(user, time)
    }

    /// Published digest for `t`, read back from the bulletin.
    pub fn digest(&self, t: Epoch) -> Result<Digest256, ServerError> {
        if t > self.current {
            return Err(ServerError::UnknownEpoch(t));
        }
        Ok(self.bulletin.get(t as u64)?)
    }

    /// Inserts the rows of epoch `t = current + 1` and publishes `δ_t`.
    pub fn insert_epoch(&mut self, t: Epoch, rows: Vec<Row>) -> Result<Digest256, ServerError> {
        let expected = self.current.checked_add(1).ok_or(ServerError::EpochOutOfOrder { expected: Epoch::MAX, got: t })?;
        if t != expected {
            return Err(ServerError::EpochOutOfOrder { expected, got: t });
        }
        self.apply_epoch(t, rows)
    }

    fn validate_rows(&self, t: Epoch, rows: &[Row]) -> Result<(), ServerError> {
        let mut users = BTreeSet::new();
        for r in rows {
            if r.time != t {
                return Err(ServerError::EpochOutOfOrder { expected: t, got: r.time });
            }
            if !users.insert(r.user_id.as_str()) {
                return Err(ServerError::DuplicateUserInEpoch { user: r.user_id.clone(), epoch: t });
            }
            if r.value >= VALUE_DOMAIN {
                return Err(ServerError::ValueOutOfRange(r.value));
            }
            if let Some(gamma) = self.schema.gamma {
                if r.value > gamma {
                    return Err(ServerError::GammaExceeded { value: r.value, gamma });
                }
            }
            self.layout.key(t, &r.types)?;
        }
        Ok(())
    }

    fn apply_epoch(&mut self, t: Epoch, rows: Vec<Row>) -> Result<Digest256, ServerError> {
        self.validate_rows(t, &rows)?;
        let stored: Vec<StoredRow> = rows
            .into_iter()
            .map(|row| StoredRow { seed: self.key.epoch_secret(&row.user_id, t), row })
            .collect();
        let (keys, trees) = self.build_buckets(t, &stored)?;
        self.store.append(stored)?;
        self.commit_buckets(keys, trees)?;
        self.current = t;
        let digest = self.tree.digest();
        self.bulletin.publish(t as u64, digest)?;
        Ok(digest)
    }

    /// Rebuild path used on reopen; rows are already in the store.
    fn build_epoch(&mut self, t: Epoch, rows: Vec<StoredRow>) -> Result<(), ServerError> {
        let plain: Vec<Row> = rows.iter().map(|r| r.row.clone()).collect();
        self.validate_rows(t, &plain)?;
        let (keys, trees) = self.build_buckets(t, &rows)?;
        self.commit_buckets(keys, trees)
    }

    fn build_buckets(&self, t: Epoch, rows: &[StoredRow]) -> Result<(Vec<PrefixKey>, Vec<SumTree>), ServerError> {
        let mut groups: BTreeMap<Vec<u32>, Vec<SumEntry>> = BTreeMap::new();
        for r in rows {
            groups.entry(r.row.types.clone()).or_default().push(SumEntry {
                value: r.row.value,
                seed: r.seed,
                id_hash: id_hash(&r.row.user_id, t),
            });
        }
        let mut keys = Vec::with_capacity(groups.len());
        let mut trees = Vec::with_capacity(groups.len());
        for (types, entries) in groups {
            keys.push(self.layout.key(t, &types)?);
            let tree = if self.misbehaviour.swap_last_two_on_insert && entries.len() >= 2 {
                let mut sorted = SumTree::build(entries, self.schema.z)?.entries().to_vec();
                let n = sorted.len();
                sorted.swap(n - 2, n - 1);
                SumTree::from_ordered(sorted, self.schema.z)?
            } else {
                SumTree::build(entries, self.schema.z)?
            };
            trees.push(tree);
        }
        Ok((keys, trees))
    }

    fn commit_buckets(&mut self, keys: Vec<PrefixKey>, trees: Vec<SumTree>) -> Result<(), ServerError> {
        for (key, tree) in keys.into_iter().zip(trees) {
            self.tree.insert(key, tree.root_hash())?;
            self.buckets.insert(key, tree);
        }
        Ok(())
    }

    fn check_epoch(&self, at: Epoch) -> Result<(), ServerError> {
        if at > self.current {
            Err(ServerError::UnknownEpoch(at))
        } else {
            Ok(())
        }
    }

    fn tree_for(&self, key: &PrefixKey) -> &SumTree {
        self.buckets.get(key).expect("every prefix leaf has a sum tree")
    }

    /// Look-up of `user`'s row in bucket `(t, types)`, proven against `δ_t`.
    pub fn lookup(&self, user: &str, types: &[u32], t: Epoch) -> Result<LookupProof, ServerError> {
        self.check_epoch(t)?;
        let key = self.layout.key(t, types)?;
        let Some(tree) = self.buckets.get(&key) else {
            let spec = RangeSpec::point(t, types);
            return Ok(LookupProof::NoBucket { cover: self.tree.range_cover(&spec, t) });
        };
        let prefix = self.tree.inclusion_proof_at(&key, t)?;
        match tree.position_of(&id_hash(user, t)) {
            Some(i) => Ok(LookupProof::Present {
                value: tree.entries()[i].value,
                prefix,
                sum: tree.inclusion_proof(i)?,
            }),
            None => Ok(LookupProof::AbsentFromBucket { prefix, leaves: tree.leaves().to_vec() }),
        }
    }

    fn covered(&self, spec: &RangeSpec, at: Epoch) -> Result<Vec<PrefixKey>, ServerError> {
        self.check_epoch(at)?;
        spec.validate(&self.layout)?;
        Ok(self.tree.covered_leaves(spec, at).into_iter().map(|l| l.key).collect())
    }

    fn check_bucket_sizes(&self, keys: &[PrefixKey]) -> Result<(), ServerError> {
        if let Some(min) = self.schema.min_bucket_size {
            if keys.iter().any(|k| (self.tree_for(k).len() as u64) < min) {
                return Err(ServerError::BucketTooSmall(min));
            }
        }
        Ok(())
    }

    /// Power sums over every row in `spec`, against `δ_at`.
    pub fn query_aggregate(&self, spec: &RangeSpec, at: Epoch) -> Result<AggregateProof, ServerError> {
        self.query_aggregate_timed(spec, at).map(|(p, _)| p)
    }

    pub fn query_aggregate_timed(&self, spec: &RangeSpec, at: Epoch) -> Result<(AggregateProof, ProofTimings), ServerError> {
        let t0 = std::time::Instant::now();
        let keys = self.covered(spec, at)?;
        self.check_bucket_sizes(&keys)?;
        let cover = self.tree.range_cover(spec, at);
        let prefix_gen = t0.elapsed();
        let t1 = std::time::Instant::now();
        let mut sums = vec![BigUint::default(); self.schema.z];
        let mut total_seed = Scalar::ZERO;
        let mut openings = Vec::with_capacity(keys.len());
        for k in &keys {
            let tree = self.tree_for(k);
            for (acc, s) in sums.iter_mut().zip(tree.power_sums()) {
                *acc += s;
            }
            total_seed += tree.total_seed();
            openings.push(tree.root_opening());
        }
        let timings = ProofTimings { prefix_gen, sum_gen: t1.elapsed() };
        Ok((AggregateProof { cover, total_seed, sums, openings }, timings))
    }

    /// Minimum or maximum over `spec`.
    pub fn query_minmax(&self, spec: &RangeSpec, mode: Extreme, at: Epoch) -> Result<MinMaxProof, ServerError> {
        self.query_minmax_timed(spec, mode, at).map(|(p, _)| p)
    }

    pub fn query_minmax_timed(
        &self,
        spec: &RangeSpec,
        mode: Extreme,
        at: Epoch,
    ) -> Result<(MinMaxProof, ProofTimings), ServerError> {
        let t0 = std::time::Instant::now();
        let keys = self.covered(spec, at)?;
        if keys.is_empty() {
            return Err(ServerError::EmptyRange);
        }
        let cover = self.tree.range_cover(spec, at);
        let prefix_gen = t0.elapsed();
        let t1 = std::time::Instant::now();
        let pick = |tree: &SumTree| match mode {
            Extreme::Min => 0,
            Extreme::Max => tree.len() - 1,
        };
        let extremes: Vec<u64> = keys.iter().map(|k| {
            let t = self.tree_for(k);
            t.entries()[pick(t)].value
        }).collect();
        let value = match mode {
            Extreme::Min => *extremes.iter().min().unwrap(),
            Extreme::Max => *extremes.iter().max().unwrap(),
        };
        let witness = extremes.iter().position(|&v| v == value).unwrap();
        let mut entries = Vec::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            let tree = self.tree_for(k);
            let idx = pick(tree);
            let e = &tree.entries()[idx];
            let (lo, hi) = if i == witness {
                (value, value + 1)
            } else {
                match mode {
                    Extreme::Min => (value, VALUE_DOMAIN),
                    Extreme::Max => (0, value + 1),
                }
            };
            entries.push(ProvenLeaf { inclusion: tree.inclusion_proof(idx)?, range: prove_range(e.value, &e.seed, lo, hi)? });
        }
        let timings = ProofTimings { prefix_gen, sum_gen: t1.elapsed() };
        Ok((MinMaxProof { cover, value, witness: witness as u32, entries }, timings))
    }

    /// `q`-quantile over `spec`; returns the largest stored value that qualifies.
    pub fn query_quantile(&self, spec: &RangeSpec, q: Quantile, at: Epoch) -> Result<QuantileProof, ServerError> {
        self.query_quantile_timed(spec, q, at).map(|(p, _)| p)
    }

    pub fn query_quantile_timed(
        &self,
        spec: &RangeSpec,
        q: Quantile,
        at: Epoch,
    ) -> Result<(QuantileProof, ProofTimings), ServerError> {
        let keys = self.covered(spec, at)?;
        if keys.is_empty() {
            return Err(ServerError::EmptyRange);
        }
        let mut values: Vec<u64> = keys
            .iter()
            .flat_map(|k| self.tree_for(k).entries().iter().map(|e| e.value))
            .collect();
        values.sort_unstable();
        let value = values
            .iter()
            .rev()
            .copied()
            .find(|&v| q.is_valid_for(&values, v))
            .ok_or_else(|| ServerError::InvalidQuantile(format!("no stored value qualifies for {q}")))?;
        self.quantile_proof_for_value_timed(spec, value, at)
    }

    /// Builds the quantile proof for an arbitrary candidate `value`. The
    /// result verifies only if `value` really is a valid quantile.
    pub fn quantile_proof_for_value(&self, spec: &RangeSpec, value: u64, at: Epoch) -> Result<QuantileProof, ServerError> {
        self.quantile_proof_for_value_timed(spec, value, at).map(|(p, _)| p)
    }

    fn quantile_proof_for_value_timed(
        &self,
        spec: &RangeSpec,
        value: u64,
        at: Epoch,
    ) -> Result<(QuantileProof, ProofTimings), ServerError> {
        if value >= VALUE_DOMAIN {
            return Err(ServerError::ValueOutOfRange(value));
        }
        let t0 = std::time::Instant::now();
        let keys = self.covered(spec, at)?;
        if keys.is_empty() {
            return Err(ServerError::EmptyRange);
        }
        let cover = self.tree.range_cover(spec, at);
        let prefix_gen = t0.elapsed();
        let t1 = std::time::Instant::now();
        let mut entries = Vec::with_capacity(keys.len());
        for k in &keys {
            let tree = self.tree_for(k);
            let prove = |idx: usize, lo: u64, hi: u64| -> Result<ProvenLeaf, ServerError> {
                let e = &tree.entries()[idx];
                Ok(ProvenLeaf { inclusion: tree.inclusion_proof(idx)?, range: prove_range(e.value, &e.seed, lo, hi)? })
            };
            let geq = tree.leftmost_geq(value).map(|i| prove(i, value, VALUE_DOMAIN)).transpose()?;
            let leq = tree.rightmost_leq(value).map(|i| prove(i, 0, value + 1)).transpose()?;
            entries.push(QuantileEntry { geq, leq });
        }
        let timings = ProofTimings { prefix_gen, sum_gen: t1.elapsed() };
        Ok((QuantileProof { cover, value, entries }, timings))
    }

    /// Sum over `spec` with bounded noise added, plus a proof that the noisy
    /// answer lies within the noise bound of the committed true sum.
    pub fn query_noisy_sum<R: RngCore + CryptoRng>(
        &self,
        spec: &RangeSpec,
        at: Epoch,
        noise: &crate::dp::NoiseDistribution,
        rng: &mut R,
    ) -> Result<NoisySumProof, ServerError> {
        let agg = self.query_aggregate(spec, at)?;
        let true_sum: u64 = agg.sums[0]
            .clone()
            .try_into()
            .map_err(|_| ServerError::Schema("sum too large for a noisy answer".into()))?;
        let z = noise.sample(rng);
        let noisy_sum = true_sum as i64 + z;
        let range = crate::dp::prove_noise_bound(noisy_sum, true_sum, &agg.total_seed, noise.bound())
            .map_err(|e| ServerError::Schema(e.to_string()))?;
        Ok(NoisySumProof { cover: agg.cover, openings: agg.openings, noisy_sum, bound: noise.bound(), range })
    }

    /// Extension proof from `t_old` to `t_new` plus sortedness (and γ-bound)
    /// proofs for every bucket created in between. `t_old = None` audits from
    /// the empty tree, covering epoch 0's buckets too.
    pub fn audit_proof(&self, t_old: Option<Epoch>, t_new: Epoch) -> Result<AuditProof, ServerError> {
        self.audit_proof_sampled(t_old, t_new, |_| true)
    }

    /// As [`Server::audit_proof`], with bucket proofs only where `include(i)`.
    pub fn audit_proof_sampled(
        &self,
        t_old: Option<Epoch>,
        t_new: Epoch,
        include: impl Fn(usize) -> bool,
    ) -> Result<AuditProof, ServerError> {
        self.check_epoch(t_new)?;
        let extension = self.tree.extension_proof(t_old, t_new)?;
        let new = self.tree.leaves_between(t_old, t_new);
        let mut buckets = Vec::with_capacity(new.len());
        for (i, leaf) in new.iter().enumerate() {
            if !include(i) {
                buckets.push(None);
                continue;
            }
            buckets.push(Some(self.bucket_audit(self.tree_for(&leaf.key))?));
        }
        Ok(AuditProof { extension, buckets })
    }

    fn bucket_audit(&self, tree: &SumTree) -> Result<BucketAudit, ServerError> {
        let entries = tree.entries();
        let mut sortedness = Vec::with_capacity(entries.len().saturating_sub(1));
        for w in entries.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let p = if b.value >= a.value {
                prove_range(b.value - a.value, &(b.seed - a.seed), 0, VALUE_DOMAIN)?
            } else {
                // Only reachable for a tree built out of order: no honest proof
                // exists, so the best a server can offer is the reversed difference.
                prove_range(a.value - b.value, &(a.seed - b.seed), 0, VALUE_DOMAIN)?
            };
            sortedness.push(p);
        }
        let mut bounds = Vec::new();
        if let Some(gamma) = self.schema.gamma {
            for e in entries {
                bounds.push(prove_range(e.value, &e.seed, 0, gamma + 1)?);
            }
        }
        Ok(BucketAudit { leaves: tree.leaves().to_vec(), sortedness, bounds })
    }

    /// Rewrites a historical row's value in place and rebuilds its bucket,
    /// without publishing anything. Stages a misbehaving server.
    #[doc(hidden)]
    pub fn tamper_value(&mut self, user: &str, time: Epoch, value: u64) -> Result<(), ServerError> {
        let row = self.store.select_by_user_epoch(user, time).ok_or(TreeError::KeyAbsent)?.row.clone();
        self.store.overwrite_value_unchecked(user, time, value);
        let key = self.layout.key(time, &row.types)?;
        let entries = self
            .store
            .select_by_bucket(time, &row.types)
            .into_iter()
            .map(|r| SumEntry { value: r.row.value, seed: r.seed, id_hash: id_hash(&r.row.user_id, time) })
            .collect();
        let tree = SumTree::build(entries, self.schema.z)?;
        self.tree.overwrite_leaf_unchecked(&key, tree.root_hash())?;
        self.buckets.insert(key, tree);
        Ok(())
    }

    /// Re-commits a historical bucket with leaves `i` and `j` swapped.
    #[doc(hidden)]
    pub fn tamper_swap_leaves(&mut self, time: Epoch, types: &[u32], i: usize, j: usize) -> Result<(), ServerError> {
        let key = self.layout.key(time, types)?;
        let tree = self.buckets.get(&key).ok_or(TreeError::KeyAbsent)?;
        let mut entries = tree.entries().to_vec();
        if i >= entries.len() || j >= entries.len() {
            return Err(TreeError::IndexOutOfBounds { index: i.max(j), len: entries.len() }.into());
        }
        entries.swap(i, j);
        let tree = SumTree::from_ordered(entries, self.schema.z)?;
        self.tree.overwrite_leaf_unchecked(&key, tree.root_hash())?;
        self.buckets.insert(key, tree);
        Ok(())
    }

    /// From now on, commit every bucket with its two largest leaves swapped.
    #[doc(hidden)]
    pub fn tamper_build_unsorted(&mut self, on: bool) {
        self.misbehaviour.swap_last_two_on_insert = on;
    }

    /// Deterministic RNG for callers that want reproducible noise.
    pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha20Rng {
        rand_chacha::ChaCha20Rng::seed_from_u64(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulletin::MemoryBulletin;

    fn row(time: Epoch, user: &str, t: u32, value: u64) -> Row {
        Row { time, user_id: user.into(), types: vec![t], value }
    }

    fn sample_server() -> Server {
        let schema = Schema::single_type("Type", &["residential", "industrial"]);
        let mut s = Server::initialize(
            schema,
            SecretKey::from_bytes([7; 32]),
            Arc::new(MemoryBulletin::new()),
            vec![row(0, "Alice", 0, 11), row(0, "Bob", 0, 24), row(0, "Carol", 0, 13)],
        )
        .unwrap();
        s.insert_epoch(
            1,
            vec![row(1, "Alice", 0, 19), row(1, "Bob", 0, 26), row(1, "Carol", 0, 27), row(1, "Dave", 0, 26), row(1, "Erin", 1, 36)],
        )
        .unwrap();
        s
    }

    #[test]
    fn epoch_secrets() {
        let k = SecretKey::from_bytes([1; 32]);
        assert_eq!(k.epoch_secret("Alice", 0), k.epoch_secret("Alice", 0));
        assert_ne!(k.epoch_secret("Alice", 0), k.epoch_secret("Alice", 1));
        assert_ne!(k.epoch_secret("Alice", 0), k.epoch_secret("Bob", 0));
        assert_ne!(k.epoch_secret("Alice", 0), SecretKey::from_bytes([2; 32]).epoch_secret("Alice", 0));
        // the length prefix keeps ("ab", t) and ("a", …) apart
        assert_ne!(k.epoch_secret("ab", 0), k.epoch_secret("a", 0x62 << 24));
    }

    #[test]
    fn fresh_init_publishes_one_digest() {
        let b = Arc::new(MemoryBulletin::new());
        let s = Server::initialize(Schema::default(), SecretKey::from_bytes([0; 32]), b.clone(), vec![]).unwrap();
        assert_eq!(b.entries().len(), 1);
        assert_eq!(s.digest(0).unwrap(), crate::prefix_tree::empty_digest());
    }

    #[test]
    fn sample_leaves_and_buckets() {
        let s = sample_server();
        let keys: Vec<_> = s
            .prefix_tree()
            .leaves_between(None, 1)
            .iter()
            .map(|l| (l.key.time(), l.key.types(s.layout())))
            .collect();
        assert_eq!(keys, vec![(0, vec![0]), (1, vec![0]), (1, vec![1])]);
        assert!(s.bucket(0, &[1]).is_none());
        let vals: Vec<_> = s.bucket(0, &[0]).unwrap().entries().iter().map(|e| e.value).collect();
        assert_eq!(vals, vec![11, 13, 24]);
        assert_eq!(s.bulletin().entries().len(), 2);
    }

    #[test]
    fn insert_rules() {
        let mut s = sample_server();
        assert!(matches!(s.insert_epoch(3, vec![]), Err(ServerError::EpochOutOfOrder { expected: 2, got: 3 })));
        assert!(matches!(
            s.insert_epoch(2, vec![row(2, "Alice", 0, 1), row(2, "Alice", 1, 2)]),
            Err(ServerError::DuplicateUserInEpoch { .. })
        ));
        assert!(matches!(s.insert_epoch(2, vec![row(2, "Zed", 0, 1 << 32)]), Err(ServerError::ValueOutOfRange(_))));
        assert!(s.insert_epoch(2, vec![row(2, "Zed", 9, 1)]).is_ok());
        let d2 = s.digest(2).unwrap();
        assert_ne!(d2, s.digest(1).unwrap());
        // empty epoch republishes the same digest
        assert_eq!(s.insert_epoch(3, vec![]).unwrap(), d2);
        assert_eq!(s.store().len(), 9);
    }

    #[test]
    fn gamma_enforced() {
        let mut schema = Schema::single_type("Type", &["r"]);
        schema.gamma = Some(40);
        let r = Server::initialize(schema, SecretKey::from_bytes([0; 32]), Arc::new(MemoryBulletin::new()), vec![row(0, "a", 0, 41)]);
        assert!(matches!(r, Err(ServerError::GammaExceeded { value: 41, gamma: 40 })));
    }

    #[test]
    fn quantile_choice_rule() {
        let s = sample_server();
        let spec = RangeSpec::all_types(s.layout(), 0, 1);
        assert_eq!(s.query_quantile(&spec, Quantile::MEDIAN, 1).unwrap().value, 26);
        assert_eq!(s.query_quantile(&spec, Quantile::new(0, 1).unwrap(), 1).unwrap().value, 11);
        assert_eq!(s.query_quantile(&spec, "0.05".parse().unwrap(), 1).unwrap().value, 11);
        assert_eq!(s.query_quantile(&spec, Quantile::new(1, 1).unwrap(), 1).unwrap().value, 36);
    }

    #[test]
    fn aggregate_sums() {
        let s = sample_server();
        let spec = RangeSpec::all_types(s.layout(), 0, 1);
        let p = s.query_aggregate(&spec, 1).unwrap();
        assert_eq!(p.sums, vec![BigUint::from(182u32), BigUint::from(4604u32)]);
        let spec0 = RangeSpec::new(0, 0, vec![(0, 0)]).unwrap();
        assert_eq!(s.query_aggregate(&spec0, 1).unwrap().sums[0], BigUint::from(48u32));
        let none = RangeSpec::new(5, 9, vec![(0, 255)]).unwrap();
        let p = s.query_aggregate(&none, 1).unwrap();
        assert!(p.openings.is_empty());
        assert_eq!(p.total_seed, Scalar::ZERO);
    }

    #[test]
    fn audit_counts() {
        let s = sample_server();
        let p = s.audit_proof(None, 1).unwrap();
        assert_eq!(p.buckets.len(), 3);
        assert_eq!(p.sortedness_count(), 5);
        let p = s.audit_proof(Some(0), 1).unwrap();
        assert_eq!(p.buckets.len(), 2);
        assert_eq!(p.sortedness_count(), 3);
        assert_eq!(s.audit_proof(Some(1), 1).unwrap().buckets.len(), 0);
        assert!(s.audit_proof(Some(0), 2).is_err());
        assert!(s.audit_proof(Some(1), 0).is_err());
    }

    #[test]
    fn persistent_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("srv");
        let schema = Schema::single_type("Type", &["residential", "industrial"]);
        let mut s = Server::create(&path, schema, SecretKey::from_bytes([3; 32]), vec![row(0, "Alice", 0, 11)]).unwrap();
        s.insert_epoch(1, vec![row(1, "Bob", 1, 5)]).unwrap();
        s.insert_epoch(2, vec![]).unwrap();
        let d = s.digest(2).unwrap();
        drop(s);
        let s = Server::open(&path).unwrap();
        assert_eq!(s.current_epoch(), 2);
        assert_eq!(s.prefix_tree().digest(), d);
        assert_eq!(s.store().len(), 2);
        assert!(Server::create(&path, Schema::default(), SecretKey::from_bytes([0; 32]), vec![]).is_err());
    }
}
