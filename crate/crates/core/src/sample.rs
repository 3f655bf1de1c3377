//! A small worked dataset: eight readings over two epochs and one type attribute.

use std::sync::Arc;

use crate::bulletin::MemoryBulletin;
use crate::prefix_tree::Epoch;
use crate::schema::Schema;
use crate::server::{SecretKey, Server};
use crate::store::Row;

pub const KEY: [u8; 32] = [7; 32];

pub fn schema() -> Schema {
    Schema::single_type("Type", &["residential", "industrial"])
}

fn row(time: Epoch, user: &str, t: u32, value: u64) -> Row {
    Row { time, user_id: user.into(), types: vec![t], value }
}

pub fn epoch0() -> Vec<Row> {
    vec![row(0, "Alice", 0, 11), row(0, "Bob", 0, 24), row(0, "Carol", 0, 13)]
}

pub fn epoch1() -> Vec<Row> {
    vec![
        row(1, "Alice", 0, 19),
        row(1, "Bob", 0, 26),
        row(1, "Carol", 0, 27),
        row(1, "Dave", 0, 26),
        row(1, "Erin", 1, 36),
    ]
}

/// In-memory server holding both epochs.
pub fn server() -> Server {
    let mut s = Server::initialize(schema(), SecretKey::from_bytes(KEY), Arc::new(MemoryBulletin::new()), epoch0())
        .expect("sample data is valid");
    s.insert_epoch(1, epoch1()).expect("sample data is valid");
    s
}
