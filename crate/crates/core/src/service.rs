//! HTTP service and a blocking client.
//!
//! Proof-bearing responses are wire messages: binary by default, the JSON
//! envelope with `format=text`. Errors are JSON `{"kind", "message"}`.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::auditor::sample_indices;
use crate::error::{ServerError, WireError};
use crate::prefix_tree::{Epoch, RangeSpec};
use crate::proofs::{AggregateProof, AuditProof, EpochDigest, Extreme, LookupProof, MinMaxProof, Quantile, QuantileProof};
use crate::schema::Schema;
use crate::server::Server;
use crate::store::Row;
use crate::wire::{self, Message};

type Shared = Arc<RwLock<Server>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Binary,
    Text,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind: "bad-request", message: message.into() }
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let (status, kind) = match &e {
            ServerError::UnknownEpoch(_) => (StatusCode::NOT_FOUND, "unknown-epoch"),
            ServerError::Storage(_) | ServerError::Bulletin(_) | ServerError::Crypto(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
            ServerError::EmptyRange => (StatusCode::UNPROCESSABLE_ENTITY, "empty-range"),
            ServerError::BucketTooSmall(_) => (StatusCode::FORBIDDEN, "bucket-too-small"),
            _ => (StatusCode::BAD_REQUEST, "rejected"),
        };
        ApiError { status, kind, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { kind: self.kind.into(), message: self.message })).into_response()
    }
}

fn encode_response<M: Message>(m: &M, format: Format) -> Response {
    match format {
        Format::Binary => ([(header::CONTENT_TYPE, "application/octet-stream")], wire::encode(m)).into_response(),
        Format::Text => ([(header::CONTENT_TYPE, "application/json")], wire::to_text(m)).into_response(),
    }
}

/// Runs `f` on a blocking thread under the read lock.
async fn read<M, F>(state: Shared, format: Format, f: F) -> Response
where
    M: Message + Send + 'static,
    F: FnOnce(&Server) -> Result<M, ApiError> + Send + 'static,
{
    let res = tokio::task::spawn_blocking(move || {
        let s = state.read().unwrap_or_else(|p| p.into_inner());
        f(&s)
    })
    .await;
    match res {
        Ok(Ok(m)) => encode_response(&m, format),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: e.to_string() }
            .into_response(),
    }
}

/// Parses per-attribute type bounds: `;`-separated, each `*`, `c` or `lo-hi`,
/// where `c`, `lo`, `hi` are labels or numeric codes. Empty means all types.
pub fn parse_type_ranges(s: &str, schema: &Schema) -> Result<Vec<(u32, u32)>, String> {
    let k = schema.type_count();
    let layout = schema.layout().map_err(|e| e.to_string())?;
    let full = RangeSpec::all_types(&layout, 0, 0).types;
    if s.trim().is_empty() {
        return Ok(full);
    }
    let parts: Vec<&str> = s.split(';').map(str::trim).collect();
    if parts.len() != k {
        return Err(format!("{} type bounds given, schema has {k} type attributes", parts.len()));
    }
    parts
        .iter()
        .enumerate()
        .map(|(a, p)| {
            if *p == "*" {
                return Ok(full[a]);
            }
            let code = |x: &str| schema.code(a, x.trim()).map_err(|e| e.to_string());
            match p.split_once('-') {
                Some((lo, hi)) => Ok((code(lo)?, code(hi)?)),
                None => code(p).map(|c| (c, c)),
            }
        })
        .collect()
}

/// Renders type bounds in the form [`parse_type_ranges`] reads.
pub fn format_type_ranges(types: &[(u32, u32)]) -> String {
    types.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RangeParams {
    pub t_min: Option<Epoch>,
    pub t_max: Option<Epoch>,
    #[serde(default)]
    pub types: String,
    /// Digest epoch; defaults to the latest.
    pub at: Option<Epoch>,
    #[serde(default)]
    pub format: Format,
    pub mode: Option<String>,
    pub q: Option<String>,
}

impl RangeParams {
    fn resolve(&self, s: &Server) -> Result<(RangeSpec, Epoch), ApiError> {
        let at = self.at.unwrap_or(s.current_epoch());
        let types = parse_type_ranges(&self.types, s.schema()).map_err(ApiError::bad_request)?;
        let spec = RangeSpec::new(self.t_min.unwrap_or(0), self.t_max.unwrap_or(at), types)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok((spec, at))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LookupParams {
    pub user: String,
    #[serde(default)]
    pub types: String,
    pub epoch: Epoch,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AuditParams {
    /// Absent audits from the empty tree.
    pub from: Option<Epoch>,
    pub to: Option<Epoch>,
    pub fraction: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DigestParams {
    pub epoch: Option<Epoch>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EpochRequest {
    pub epoch: Epoch,
    pub rows: Vec<Row>,
}

async fn digest(State(st): State<Shared>, Query(p): Query<DigestParams>) -> Response {
    read(st, p.format, move |s| {
        let epoch = p.epoch.unwrap_or(s.current_epoch());
        Ok(EpochDigest { epoch, digest: s.digest(epoch)? })
    })
    .await
}

async fn schema(State(st): State<Shared>) -> Response {
    let s = st.read().unwrap_or_else(|p| p.into_inner());
    ([(header::CONTENT_TYPE, "application/toml")], s.schema().to_toml()).into_response()
}

async fn lookup(State(st): State<Shared>, Query(p): Query<LookupParams>) -> Response {
    read(st, p.format, move |s| {
        let types = parse_type_ranges(&p.types, s.schema()).map_err(ApiError::bad_request)?;
        if types.iter().any(|(lo, hi)| lo != hi) {
            return Err(ApiError::bad_request("look-up needs one code per type attribute"));
        }
        let codes: Vec<u32> = types.iter().map(|(c, _)| *c).collect();
        Ok(s.lookup(&p.user, &codes, p.epoch)?)
    })
    .await
}

async fn sum(State(st): State<Shared>, Query(p): Query<RangeParams>) -> Response {
    read(st, p.format, move |s| {
        let (spec, at) = p.resolve(s)?;
        Ok(s.query_aggregate(&spec, at)?)
    })
    .await
}

async fn minmax(State(st): State<Shared>, Query(p): Query<RangeParams>) -> Response {
    read(st, p.format, move |s| {
        let (spec, at) = p.resolve(s)?;
        let mode: Extreme = p.mode.as_deref().unwrap_or("min").parse().map_err(ApiError::bad_request)?;
        Ok(s.query_minmax(&spec, mode, at)?)
    })
    .await
}

async fn quantile(State(st): State<Shared>, Query(p): Query<RangeParams>) -> Response {
    read(st, p.format, move |s| {
        let (spec, at) = p.resolve(s)?;
        let q: Quantile = p.q.as_deref().unwrap_or("0.5").parse().map_err(ApiError::bad_request)?;
        Ok(s.query_quantile(&spec, q, at)?)
    })
    .await
}

async fn audit(State(st): State<Shared>, Query(p): Query<AuditParams>) -> Response {
    read(st, p.format, move |s| {
        let to = p.to.unwrap_or(s.current_epoch());
        match p.fraction {
            None => Ok(s.audit_proof(p.from, to)?),
            Some(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(ApiError::bad_request("fraction must lie in [0, 1]"));
                }
                let seed = p.seed.ok_or_else(|| ApiError::bad_request("sampled audit needs a seed"))?;
                let n = s.prefix_tree().leaves_between(p.from, to.min(s.current_epoch())).len();
                let picks = sample_indices(n, f, seed);
                Ok(s.audit_proof_sampled(p.from, to, |i| picks.binary_search(&i).is_ok())?)
            }
        }
    })
    .await
}

async fn insert(State(st): State<Shared>, body: axum::body::Bytes) -> Response {
    let req: EpochRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError::bad_request(format!("epoch request: {e}")).into_response(),
    };
    let res = tokio::task::spawn_blocking(move || {
        let mut s = st.write().unwrap_or_else(|p| p.into_inner());
        s.insert_epoch(req.epoch, req.rows).map(|digest| EpochDigest { epoch: req.epoch, digest })
    })
    .await;
    match res {
        Ok(Ok(d)) => encode_response(&d, Format::Binary),
        Ok(Err(e)) => ApiError::from(e).into_response(),
        Err(e) => ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: e.to_string() }
            .into_response(),
    }
}

pub fn router(server: Server) -> Router {
    Router::new()
        .route("/epoch", post(insert))
        .route("/digest", get(digest))
        .route("/schema", get(schema))
        .route("/lookup", get(lookup))
        .route("/sum", get(sum))
        .route("/minmax", get(minmax))
        .route("/quantile", get(quantile))
        .route("/audit", get(audit))
        .with_state(Arc::new(RwLock::new(server)))
}

/// Serves until the process ends.
pub fn serve_forever(server: Server, addr: &str) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        axum::serve(listener, router(server)).await
    })
}

/// A service running on its own thread; stops when dropped.
pub struct RunningService {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl RunningService {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks one) and serves `app` on a background thread.
pub fn spawn_router(app: Router, addr: &str) -> std::io::Result<RunningService> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || -> std::io::Result<()> {
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(RunningService { addr: local, stop: Some(tx), thread: Some(thread) })
}

pub fn spawn(server: Server, addr: &str) -> std::io::Result<RunningService> {
    spawn_router(router(server), addr)
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Server { status: u16, kind: String, message: String },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("schema: {0}")]
    Schema(String),
}

/// Synchronous client; one request per call.
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Client { base: base_url.trim_end_matches('/').to_string(), http: reqwest::blocking::Client::new() }
    }

    fn get_bytes(&self, path: &str, query: &[(&str, String)]) -> Result<Vec<u8>, ClientError> {
        let resp = self.http.get(format!("{}{path}", self.base)).query(query).send()?;
        Self::body(resp)
    }

    fn body(resp: reqwest::blocking::Response) -> Result<Vec<u8>, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes()?.to_vec();
        if !status.is_success() {
            let (kind, message) = match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(b) => (b.kind, b.message),
                Err(_) => ("unknown".into(), String::from_utf8_lossy(&bytes).into_owned()),
            };
            return Err(ClientError::Server { status: status.as_u16(), kind, message });
        }
        Ok(bytes)
    }

    fn get<M: Message>(&self, path: &str, query: &[(&str, String)]) -> Result<M, ClientError> {
        Ok(wire::decode(&self.get_bytes(path, query)?)?)
    }

    pub fn schema(&self) -> Result<Schema, ClientError> {
        let text = String::from_utf8(self.get_bytes("/schema", &[])?).map_err(|e| ClientError::Schema(e.to_string()))?;
        Schema::from_toml(&text).map_err(|e| ClientError::Schema(e.to_string()))
    }

    pub fn digest(&self, epoch: Option<Epoch>) -> Result<EpochDigest, ClientError> {
        let q: Vec<_> = epoch.map(|e| ("epoch", e.to_string())).into_iter().collect();
        self.get("/digest", &q)
    }

    pub fn insert_epoch(&self, epoch: Epoch, rows: Vec<Row>) -> Result<EpochDigest, ClientError> {
        let body = serde_json::to_vec(&EpochRequest { epoch, rows }).expect("rows serialize");
        let resp = self.http.post(format!("{}/epoch", self.base)).body(body).send()?;
        Ok(wire::decode(&Self::body(resp)?)?)
    }

    pub fn lookup(&self, user: &str, types: &[u32], epoch: Epoch) -> Result<LookupProof, ClientError> {
        let types = types.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
        self.get("/lookup", &[("user", user.to_string()), ("types", types), ("epoch", epoch.to_string())])
    }

    fn range_query(spec: &RangeSpec, at: Epoch) -> Vec<(&'static str, String)> {
        vec![
            ("t_min", spec.t_min.to_string()),
            ("t_max", spec.t_max.to_string()),
            ("types", format_type_ranges(&spec.types)),
            ("at", at.to_string()),
        ]
    }

    pub fn sum(&self, spec: &RangeSpec, at: Epoch) -> Result<AggregateProof, ClientError> {
        self.get("/sum", &Self::range_query(spec, at))
    }

    pub fn minmax(&self, spec: &RangeSpec, mode: Extreme, at: Epoch) -> Result<MinMaxProof, ClientError> {
        let mut q = Self::range_query(spec, at);
        q.push(("mode", if mode == Extreme::Min { "min" } else { "max" }.into()));
        self.get("/minmax", &q)
    }

    pub fn quantile(&self, spec: &RangeSpec, q: Quantile, at: Epoch) -> Result<QuantileProof, ClientError> {
        let mut query = Self::range_query(spec, at);
        query.push(("q", q.to_string()));
        self.get("/quantile", &query)
    }

    pub fn audit(&self, from: Option<Epoch>, to: Epoch, sample: Option<(f64, u64)>) -> Result<AuditProof, ClientError> {
        let mut q = vec![("to", to.to_string())];
        if let Some(f) = from {
            q.push(("from", f.to_string()));
        }
        if let Some((fraction, seed)) = sample {
            q.push(("fraction", fraction.to_string()));
            q.push(("seed", seed.to_string()));
        }
        self.get("/audit", &q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;

    #[test]
    fn type_range_syntax() {
        let schema = sample::schema();
        assert_eq!(parse_type_ranges("", &schema), Ok(vec![(0, 255)]));
        assert_eq!(parse_type_ranges("*", &schema), Ok(vec![(0, 255)]));
        assert_eq!(parse_type_ranges("industrial", &schema), Ok(vec![(1, 1)]));
        assert_eq!(parse_type_ranges("0-1", &schema), Ok(vec![(0, 1)]));
        assert_eq!(parse_type_ranges("residential-industrial", &schema), Ok(vec![(0, 1)]));
        assert!(parse_type_ranges("0;1", &schema).is_err());
        assert!(parse_type_ranges("office", &schema).is_err());
        assert_eq!(parse_type_ranges(&format_type_ranges(&[(0, 1)]), &schema), Ok(vec![(0, 1)]));
    }

    #[test]
    fn client_round_trip() {
        let svc = spawn(sample::server(), "127.0.0.1:0").unwrap();
        let c = Client::new(&svc.url());
        assert_eq!(c.schema().unwrap(), sample::schema());
        let d = c.digest(None).unwrap();
        assert_eq!((d.epoch, d.digest), (1, sample::server().digest(1).unwrap()));
        assert!(matches!(c.digest(Some(5)), Err(ClientError::Server { status: 404, .. })));
        let p = c.lookup("Bob", &[0], 1).unwrap();
        assert!(matches!(p, LookupProof::Present { value: 26, .. }));
        let spec = RangeSpec::all_types(&sample::schema().layout().unwrap(), 0, 1);
        assert_eq!(c.sum(&spec, 1).unwrap().sums[0], 182u32.into());
        assert_eq!(c.minmax(&spec, Extreme::Max, 1).unwrap().value, 36);
        assert_eq!(c.quantile(&spec, Quantile::MEDIAN, 1).unwrap().value, 26);
        assert_eq!(c.audit(None, 1, None).unwrap().sortedness_count(), 5);
        let sampled = c.audit(None, 1, Some((0.4, 9))).unwrap();
        assert_eq!(sampled.buckets.iter().flatten().count(), 2);
        let row = Row { time: 2, user_id: "Alice".into(), types: vec![0], value: 3 };
        assert_eq!(c.insert_epoch(2, vec![row.clone()]).unwrap().epoch, 2);
        let err = c.insert_epoch(2, vec![row]).unwrap_err();
        assert!(matches!(err, ClientError::Server { status: 400, .. }), "{err}");
        assert_eq!(c.digest(None).unwrap().epoch, 2);
    }
}
