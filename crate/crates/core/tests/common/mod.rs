//! Shared fixtures and a structured proof mutator.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use base64::Engine;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use tap_core::bulletin::MemoryBulletin;
use tap_core::ingest;
use tap_core::schema::Schema;
use tap_core::server::{SecretKey, Server};

pub const KEY: [u8; 32] = [7; 32];

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn schema() -> Schema {
    Schema::from_toml(&std::fs::read_to_string(data("schema.toml")).unwrap()).unwrap()
}

/// The eight-row worked example, ingested from CSV into a fresh server.
pub fn fixture_with(schema: Schema) -> Server {
    let file = std::fs::File::open(data("readings.csv")).unwrap();
    let epochs = ingest::parse_csv(file, &schema).unwrap();
    let (server, summary) = ingest::ingest_new(epochs, |initial| {
        Server::initialize(schema.clone(), SecretKey::from_bytes(KEY), Arc::new(MemoryBulletin::new()), initial)
    })
    .unwrap();
    assert_eq!(summary.rows, 8);
    server
}

pub fn fixture() -> Server {
    fixture_with(schema())
}

/// Fixture values as `(time, user, type, value)`, read straight from the CSV.
pub fn fixture_rows() -> Vec<(u32, String, u32, u64)> {
    let text = std::fs::read_to_string(data("readings.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let t = if f[2] == "industrial" { 1 } else { 0 };
            (f[0].parse().unwrap(), f[1].to_string(), t, f[3].parse().unwrap())
        })
        .collect()
}

/// Enum variants carrying the same payload, swapped for one another.
const TAG_SWAPS: [(&str, &str); 4] = [("Pruned", "Leaf"), ("Leaf", "Pruned"), ("Old", "New"), ("New", "Old")];

fn swappable_tag(m: &serde_json::Map<String, Value>) -> Option<&'static str> {
    let key = m.keys().next().filter(|_| m.len() == 1)?;
    TAG_SWAPS.iter().find(|(from, _)| from == key).map(|(_, to)| *to)
}

fn count(v: &Value, leaves: &mut usize, arrays: &mut usize) {
    if let Value::Object(m) = v {
        if swappable_tag(m).is_some() {
            *leaves += 1;
        }
    }
    match v {
        Value::Array(a) => {
            if !a.is_empty() {
                *arrays += 1;
            }
            a.iter().for_each(|x| count(x, leaves, arrays));
        }
        Value::Object(m) => m.values().for_each(|x| count(x, leaves, arrays)),
        Value::Null => {}
        _ => *leaves += 1,
    }
}

fn nth_leaf<'a>(v: &'a mut Value, n: &mut usize) -> Option<&'a mut Value> {
    if let Value::Object(m) = v {
        if swappable_tag(m).is_some() {
            if *n == 0 {
                return Some(v);
            }
            *n -= 1;
        }
    }
    match v {
        Value::Array(a) => a.iter_mut().find_map(|x| nth_leaf(x, n)),
        Value::Object(m) => m.values_mut().find_map(|x| nth_leaf(x, n)),
        Value::Null => None,
        _ if *n == 0 => Some(v),
        _ => {
            *n -= 1;
            None
        }
    }
}

fn nth_array<'a>(v: &'a mut Value, n: &mut usize) -> Option<&'a mut Vec<Value>> {
    match v {
        Value::Array(a) if !a.is_empty() => {
            if *n == 0 {
                return Some(a);
            }
            *n -= 1;
            a.iter_mut().find_map(|x| nth_array(x, n))
        }
        Value::Array(_) | Value::Null => None,
        Value::Object(m) => m.values_mut().find_map(|x| nth_array(x, n)),
        _ => None,
    }
}

fn mutate_leaf<R: Rng>(v: &mut Value, rng: &mut R) {
    let b64 = base64::engine::general_purpose::STANDARD;
    match v {
        Value::Bool(b) => *b = !*b,
        Value::Number(n) => {
            *v = if let Some(u) = n.as_u64() {
                let m = match rng.gen_range(0..4) {
                    0 => u.wrapping_add(1),
                    1 => u.wrapping_sub(1),
                    2 => u ^ (1 << rng.gen_range(0..8)),
                    _ => u ^ (1 << rng.gen_range(0..64)),
                };
                Value::from(m)
            } else if let Some(i) = n.as_i64() {
                Value::from(i + if rng.gen() { 1 } else { -1 })
            } else {
                Value::from(n.as_f64().unwrap_or(0.0) + 1.0)
            };
        }
        Value::String(s) => match b64.decode(s.as_bytes()) {
            Ok(mut bytes) if !bytes.is_empty() => {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] ^= 1 << rng.gen_range(0..8);
                *s = b64.encode(bytes);
            }
            _ => {
                // unit enum variants
                *s = match s.as_str() {
                    "Empty" if rng.gen() => {
                        let mut d = [0u8; 32];
                        rng.fill(&mut d);
                        let tag = if rng.gen() { "Old" } else { "New" };
                        *v = serde_json::json!({ tag: b64.encode(d) });
                        return;
                    }
                    "Left" => "Right".into(),
                    "Right" => "Left".into(),
                    "Min" => "Max".into(),
                    "Max" => "Min".into(),
                    _ => format!("{s}x"),
                }
            }
        },
        Value::Object(m) => {
            let to = swappable_tag(m).expect("only tagged objects are leaves");
            let (_, payload) = m.iter().next().map(|(k, v)| (k.clone(), v.clone())).unwrap();
            m.clear();
            m.insert(to.to_string(), payload);
        }
        _ => unreachable!("arrays and null are not leaves"),
    }
}

/// Outcome of one mutation attempt.
pub enum Mutant<T> {
    /// The mutated document no longer parses as `T`.
    Undecodable,
    Decoded(T),
}

/// Applies one random single-field mutation to the JSON form of `value`,
/// restricted to the subtree at `pointer` (`""` for everything): a leaf is
/// changed, or one array element is dropped or duplicated.
pub fn mutate<T: Serialize + DeserializeOwned, R: Rng>(value: &T, pointer: &str, rng: &mut R) -> Mutant<T> {
    let original = serde_json::to_value(value).unwrap();
    loop {
        let mut doc = original.clone();
        let target = doc.pointer_mut(pointer).expect("pointer into the proof");
        let (mut leaves, mut arrays) = (0, 0);
        count(target, &mut leaves, &mut arrays);
        assert!(leaves > 0, "nothing to mutate at {pointer:?}");
        if arrays > 0 && rng.gen_ratio(3, 20) {
            let mut n = rng.gen_range(0..arrays);
            let a = nth_array(target, &mut n).unwrap();
            let i = rng.gen_range(0..a.len());
            if rng.gen() {
                a.remove(i);
            } else {
                let x = a[i].clone();
                a.insert(i, x);
            }
        } else {
            let mut n = rng.gen_range(0..leaves);
            mutate_leaf(nth_leaf(target, &mut n).unwrap(), rng);
        }
        if doc == original {
            continue;
        }
        return match serde_json::from_value::<T>(doc) {
            Ok(t) => Mutant::Decoded(t),
            Err(_) => Mutant::Undecodable,
        };
    }
}

/// Tally of a fuzzing campaign.
#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub total: usize,
    pub undecodable: usize,
    /// Decoded back to the original proof (a no-op mutation).
    pub equivalent: usize,
    pub rejected: usize,
    pub accepted: usize,
}

/// Runs `n` mutations of `proof` and feeds each decodable one to `verify`
/// (which returns true on acceptance).
pub fn fuzz<T, R, F>(proof: &T, pointer: &str, n: usize, rng: &mut R, mut verify: F) -> FuzzTally
where
    T: Serialize + DeserializeOwned + PartialEq,
    R: Rng,
    F: FnMut(&T) -> bool,
{
    let mut tally = FuzzTally { total: n, ..FuzzTally::default() };
    for _ in 0..n {
        match mutate(proof, pointer, rng) {
            Mutant::Undecodable => tally.undecodable += 1,
            Mutant::Decoded(m) if m == *proof => tally.equivalent += 1,
            Mutant::Decoded(m) => {
                if verify(&m) {
                    tally.accepted += 1;
                } else {
                    tally.rejected += 1;
                }
            }
        }
    }
    tally
}

impl FuzzTally {
    /// Mutants that differed from the original and were turned away.
    pub fn refused(&self) -> usize {
        self.undecodable + self.rejected
    }
}
