use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("value {value} outside [{lo}, {hi})")]
    ValueOutOfRange { value: u64, lo: u64, hi: u64 },
    #[error("range [{lo}, {hi}) wider than the 32-bit proof domain")]
    WidthExceeded { lo: u64, hi: u64 },
    #[error("empty range [{lo}, {hi})")]
    EmptyRange { lo: u64, hi: u64 },
    #[error("encoding: {0}")]
    Encoding(&'static str),
    #[error("proof system: {0}")]
    Proof(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("key already present")]
    DuplicateKey,
    #[error("time {new} precedes latest stored time {latest}")]
    TimeRegression { latest: u32, new: u32 },
    #[error("key not present")]
    KeyAbsent,
    #[error("key has {got} bits, layout expects {expected}")]
    KeyLength { expected: usize, got: usize },
    #[error("unknown epoch {0}")]
    UnknownEpoch(u32),
    #[error("sum tree bucket is empty")]
    EmptyBucket,
    #[error("value {0} outside the 32-bit value domain")]
    ValueOutOfRange(u64),
    #[error("leaf index {index} out of bounds for {len} leaves")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("invalid schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BulletinError {
    #[error("epoch {epoch} already published with a different digest")]
    Equivocation { epoch: u64 },
    #[error("epoch {new} does not follow latest epoch {latest}")]
    EpochRegression { latest: u64, new: u64 },
    #[error("unknown epoch {0}")]
    UnknownEpoch(u64),
    #[error("bulletin log corrupted at record {0}")]
    Corrupted(usize),
    #[error("bulletin unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("user {user} appears more than once in epoch {epoch}")]
    DuplicateUserInEpoch { user: String, epoch: u32 },
    #[error("epoch {got} out of order, expected {expected}")]
    EpochOutOfOrder { expected: u32, got: u32 },
    #[error("value {0} outside the 32-bit value domain")]
    ValueOutOfRange(u64),
    #[error("value {value} exceeds the configured bound {gamma}")]
    GammaExceeded { value: u64, gamma: u64 },
    #[error("unknown epoch {0}")]
    UnknownEpoch(u32),
    #[error("query range is empty")]
    EmptyRange,
    #[error("invalid quantile: {0}")]
    InvalidQuantile(String),
    #[error("bucket smaller than the configured minimum of {0} rows")]
    BucketTooSmall(u64),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Bulletin(#[from] BulletinError),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpError {
    #[error("sum sensitivity is unbounded without a per-value bound")]
    UnboundedSensitivity,
    #[error("density violates normalization: total mass {0}")]
    Normalization(f64),
    #[error("density must be finite and non-negative")]
    NegativeDensity,
    #[error("noise bound {b} smaller than sensitivity {sensitivity}")]
    BoundTooSmall { b: u64, sensitivity: u64 },
    #[error("results differ by more than the sensitivity")]
    PlacementExceedsSensitivity,
    #[error("noise {noise} exceeds bound {b}")]
    NoiseExceedsBound { noise: i64, b: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("expected {expected} message, got {got}")]
    UnexpectedKind { expected: &'static str, got: &'static str },
    #[error("malformed binary body: {0}")]
    Binary(#[from] bincode::Error),
    #[error("malformed text body: {0}")]
    Text(#[from] serde_json::Error),
    #[error("truncated message")]
    Truncated,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header {found:?} does not match the schema, expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("{user} has two rows at time {time} (line {line})")]
    Duplicate { user: String, time: u32, line: u64 },
    #[error(transparent)]
    Server(#[from] ServerError),
}
