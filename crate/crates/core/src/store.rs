//! Row store: an append-only record file plus in-memory indexes.
//!
//! Record layout, each prefixed by its byte length (u32 BE):
//! `time u32 ‖ id_len u32 ‖ id utf-8 ‖ type codes u32… ‖ value u32 ‖ seed 32B`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Row {
    pub time: u32,
    pub user_id: String,
    pub types: Vec<u32>,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredRow {
    pub row: Row,
    pub seed: Scalar,
}

impl StoredRow {
    fn encode(&self) -> Vec<u8> {
        let r = &self.row;
        let mut body = Vec::with_capacity(48 + r.user_id.len() + 4 * r.types.len());
        body.extend_from_slice(&r.time.to_be_bytes());
        body.extend_from_slice(&(r.user_id.len() as u32).to_be_bytes());
        body.extend_from_slice(r.user_id.as_bytes());
        for t in &r.types {
            body.extend_from_slice(&t.to_be_bytes());
        }
        body.extend_from_slice(&(r.value as u32).to_be_bytes());
        body.extend_from_slice(&self.seed.to_be_bytes());
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        out
    }

    fn decode(body: &[u8], type_count: usize) -> Option<Self> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Option<&[u8]> {
            let s = body.get(at..at + n)?;
            at += n;
            Some(s)
        };
        let u32_at = |s: &[u8]| u32::from_be_bytes(s.try_into().unwrap());
        let time = u32_at(take(4)?);
        let id_len = u32_at(take(4)?) as usize;
        let user_id = String::from_utf8(take(id_len)?.to_vec()).ok()?;
        let mut types = Vec::with_capacity(type_count);
        for _ in 0..type_count {
            types.push(u32_at(take(4)?));
        }
        let value = u32_at(take(4)?) as u64;
        let seed = Scalar::from_be_bytes(take(32)?.try_into().unwrap()).ok()?;
        if at != body.len() {
            return None;
        }
        Some(StoredRow { row: Row { time, user_id, types, value }, seed })
    }
}

#[derive(Default)]
pub struct RowStore {
    rows: Vec<StoredRow>,
    by_user: HashMap<(String, u32), usize>,
    by_bucket: BTreeMap<(u32, Vec<u32>), Vec<usize>>,
    file: Option<File>,
}

impl RowStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a record file, replaying every stored row into the indexes.
    pub fn open(path: impl AsRef<Path>, type_count: usize) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut store = RowStore::default();
        let mut at = 0;
        while at < bytes.len() {
            let corrupt = || io::Error::new(io::ErrorKind::InvalidData, format!("corrupt row record at byte {at}"));
            let len = bytes.get(at..at + 4).ok_or_else(corrupt)?;
            let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
            let body = bytes.get(at + 4..at + 4 + len).ok_or_else(corrupt)?;
            let row = StoredRow::decode(body, type_count).ok_or_else(corrupt)?;
            store.index(row);
            at += 4 + len;
        }
        store.file = Some(file);
        Ok(store)
    }

    fn index(&mut self, row: StoredRow) {
        let i = self.rows.len();
        self.by_user.insert((row.row.user_id.clone(), row.row.time), i);
        self.by_bucket.entry((row.row.time, row.row.types.clone())).or_default().push(i);
        self.rows.push(row);
    }

    /// Appends one epoch's rows; durable before returning when file-backed.
    pub fn append(&mut self, rows: Vec<StoredRow>) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            let mut buf = Vec::new();
            for r in &rows {
                buf.extend_from_slice(&r.encode());
            }
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        for r in rows {
            self.index(r);
        }
        Ok(())
    }

    pub fn contains(&self, user: &str, time: u32) -> bool {
        self.by_user.contains_key(&(user.to_string(), time))
    }

    pub fn select_by_user_epoch(&self, user: &str, time: u32) -> Option<&StoredRow> {
        self.by_user.get(&(user.to_string(), time)).map(|&i| &self.rows[i])
    }

    pub fn select_by_bucket(&self, time: u32, types: &[u32]) -> Vec<&StoredRow> {
        self.by_bucket
            .get(&(time, types.to_vec()))
            .map(|ix| ix.iter().map(|&i| &self.rows[i]).collect())
            .unwrap_or_default()
    }

    /// Distinct `(time, types)` buckets, in key order.
    pub fn buckets(&self) -> impl Iterator<Item = &(u32, Vec<u32>)> {
        self.by_bucket.keys()
    }

    pub fn rows(&self) -> &[StoredRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Changes a stored value in memory only. Used to stage a misbehaving server.
    #[doc(hidden)]
    pub fn overwrite_value_unchecked(&mut self, user: &str, time: u32, value: u64) -> bool {
        match self.by_user.get(&(user.to_string(), time)) {
            Some(&i) => {
                self.rows[i].row.value = value;
                true
            }
            None => false,
        }
    }
}
