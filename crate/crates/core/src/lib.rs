pub mod auditor;
pub mod bench;
pub mod bulletin;
pub mod crypto;
pub mod dp;
pub mod error;
pub mod ingest;
pub mod prefix_tree;
pub mod sample;
pub mod proofs;
pub mod schema;
pub mod server;
pub mod service;
pub mod store;
pub mod sum_tree;
pub mod verifier;
pub mod wire;
