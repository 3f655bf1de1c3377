//! Append-only digest log.
//!
//! Records are chained: each stores the hash of the previous record, so a
//! rewritten history no longer links up on reload.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use crate::crypto::{hash_parts, Digest256};
use crate::error::BulletinError;

const RECORD_LEN: usize = 8 + 32 + 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BulletinEntry {
    pub epoch: u64,
    pub digest: Digest256,
    /// Only known for entries published in this process.
    pub published_at: Option<SystemTime>,
}

/// Anything that can play the bulletin board: append-once per epoch, read back forever.
pub trait Bulletin: Send + Sync {
    fn publish(&self, epoch: u64, digest: Digest256) -> Result<(), BulletinError>;
    fn get(&self, epoch: u64) -> Result<Digest256, BulletinError>;
    fn latest(&self) -> Option<(u64, Digest256)>;
    fn entries(&self) -> Vec<BulletinEntry>;
}

impl<B: Bulletin + ?Sized> Bulletin for Arc<B> {
    fn publish(&self, epoch: u64, digest: Digest256) -> Result<(), BulletinError> {
        (**self).publish(epoch, digest)
    }
    fn get(&self, epoch: u64) -> Result<Digest256, BulletinError> {
        (**self).get(epoch)
    }
    fn latest(&self) -> Option<(u64, Digest256)> {
        (**self).latest()
    }
    fn entries(&self) -> Vec<BulletinEntry> {
        (**self).entries()
    }
}

fn record_hash(record: &[u8]) -> Digest256 {
    hash_parts([record])
}

/// Shared append logic; returns `Ok(false)` for an idempotent re-publish.
fn check_append(entries: &[BulletinEntry], epoch: u64, digest: &Digest256) -> Result<bool, BulletinError> {
    if let Some(existing) = entries.iter().find(|e| e.epoch == epoch) {
        return if existing.digest == *digest { Ok(false) } else { Err(BulletinError::Equivocation { epoch }) };
    }
    if let Some(last) = entries.last() {
        if epoch <= last.epoch {
            return Err(BulletinError::EpochRegression { latest: last.epoch, new: epoch });
        }
    }
    Ok(true)
}

fn lookup(entries: &[BulletinEntry], epoch: u64) -> Result<Digest256, BulletinError> {
    entries
        .binary_search_by_key(&epoch, |e| e.epoch)
        .map(|i| entries[i].digest)
        .map_err(|_| BulletinError::UnknownEpoch(epoch))
}

#[derive(Default)]
pub struct MemoryBulletin {
    entries: Mutex<Vec<BulletinEntry>>,
}

impl MemoryBulletin {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Bulletin for MemoryBulletin {
    fn publish(&self, epoch: u64, digest: Digest256) -> Result<(), BulletinError> {
        let mut entries = self.entries.lock().unwrap();
        if check_append(&entries, epoch, &digest)? {
            entries.push(BulletinEntry { epoch, digest, published_at: Some(SystemTime::now()) });
        }
        Ok(())
    }

    fn get(&self, epoch: u64) -> Result<Digest256, BulletinError> {
        lookup(&self.entries.lock().unwrap(), epoch)
    }

    fn latest(&self) -> Option<(u64, Digest256)> {
        self.entries.lock().unwrap().last().map(|e| (e.epoch, e.digest))
    }

    fn entries(&self) -> Vec<BulletinEntry> {
        self.entries.lock().unwrap().clone()
    }
}

struct FileState {
    entries: Vec<BulletinEntry>,
    last_hash: Digest256,
    file: File,
}

/// File-backed log of fixed 72-byte records `epoch ‖ digest ‖ prev_hash`.
pub struct FileBulletin {
    path: PathBuf,
    state: Mutex<FileState>,
}

impl FileBulletin {
    /// Opens (or creates) the log and checks the hash chain.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BulletinError> {
        let path = path.as_ref().to_path_buf();
        let unavailable = |e: std::io::Error| BulletinError::Unavailable(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(unavailable)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(unavailable)?;
        if bytes.len() % RECORD_LEN != 0 {
            return Err(BulletinError::Corrupted(bytes.len() / RECORD_LEN));
        }
        let mut entries: Vec<BulletinEntry> = Vec::new();
        let mut last_hash = Digest256::ZERO;
        for (i, rec) in bytes.chunks(RECORD_LEN).enumerate() {
            let epoch = u64::from_be_bytes(rec[..8].try_into().unwrap());
            let digest = Digest256(rec[8..40].try_into().unwrap());
            let prev = Digest256(rec[40..72].try_into().unwrap());
            if prev != last_hash || entries.last().is_some_and(|e| e.epoch >= epoch) {
                return Err(BulletinError::Corrupted(i));
            }
            entries.push(BulletinEntry { epoch, digest, published_at: None });
            last_hash = record_hash(rec);
        }
        Ok(FileBulletin { path, state: Mutex::new(FileState { entries, last_hash, file }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Bulletin for FileBulletin {
    fn publish(&self, epoch: u64, digest: Digest256) -> Result<(), BulletinError> {
        let mut st = self.state.lock().unwrap();
        if !check_append(&st.entries, epoch, &digest)? {
            return Ok(());
        }
        let mut rec = [0u8; RECORD_LEN];
        rec[..8].copy_from_slice(&epoch.to_be_bytes());
        rec[8..40].copy_from_slice(digest.as_bytes());
        rec[40..].copy_from_slice(st.last_hash.as_bytes());
        st.file
            .write_all(&rec)
            .and_then(|_| st.file.sync_data())
            .map_err(|e| BulletinError::Unavailable(e.to_string()))?;
        st.last_hash = record_hash(&rec);
        st.entries.push(BulletinEntry { epoch, digest, published_at: Some(SystemTime::now()) });
        Ok(())
    }

    fn get(&self, epoch: u64) -> Result<Digest256, BulletinError> {
        lookup(&self.state.lock().unwrap().entries, epoch)
    }

    fn latest(&self) -> Option<(u64, Digest256)> {
        self.state.lock().unwrap().entries.last().map(|e| (e.epoch, e.digest))
    }

    fn entries(&self) -> Vec<BulletinEntry> {
        self.state.lock().unwrap().entries.clone()
    }
}
