//! C ABI over `tap-core`.
//!
//! Handles are opaque pointers created by `tap_*_new`/`tap_*_open` and
//! released with the matching `_free`. Every fallible call returns a
//! [`TapStatus`]; after a failure `tap_last_error()` describes it. Proofs
//! cross the boundary as binary wire messages in a [`TapBuffer`].
//!
//! Strings are NUL-terminated UTF-8. Digests and seeds are 32-byte arrays.
//!
//! # Safety
//!
//! Every pointer argument must be null or valid for the documented length;
//! handles must come from this library and not be used after `_free`.
//! Null where a value is required yields `TAP_STATUS_INVALID_ARGUMENT`.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use tap_core::auditor::Auditor;
use tap_core::bulletin::{Bulletin, MemoryBulletin};
use tap_core::crypto::{Digest256, Scalar};
use tap_core::ingest;
use tap_core::prefix_tree::{Epoch, RangeSpec};
use tap_core::proofs::{AggregateProof, AuditProof, Extreme, LookupProof, MinMaxProof, Quantile, QuantileProof};
use tap_core::schema::Schema;
use tap_core::server::{SecretKey, Server};
use tap_core::verifier::Verifier;
use tap_core::wire;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, or a value the call cannot accept.
    InvalidArgument = 1,
    /// The proof was checked and rejected.
    VerificationFailed = 2,
    /// The server refused or failed the request.
    ServerError = 3,
    /// The bytes are not a well-formed message of the expected kind.
    WireError = 4,
    /// A result does not fit the output type.
    Overflow = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

pub struct TapServer(Server);

pub struct TapVerifier {
    verifier: Verifier,
    auditor: Auditor,
}

/// Owned byte buffer.
pub struct TapBuffer(Vec<u8>);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TapTypeRange {
    pub lo: u32,
    pub hi: u32,
}

/// Inclusive time and per-attribute type bounds.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TapRange {
    pub t_min: u32,
    pub t_max: u32,
    pub types: *const TapTypeRange,
    pub type_count: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TapAggregate {
    pub count: u64,
    pub sum: u64,
    pub sum_squares: u64,
    /// NaN when undefined.
    pub mean: f64,
    pub stddev: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TapAuditReport {
    pub passed: bool,
    pub new_buckets: usize,
    pub buckets_checked: usize,
    pub sortedness_checked: usize,
    pub bounds_checked: usize,
    pub findings: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapExtreme {
    Min = 0,
    Max = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(TapStatus);

impl Fail {
    fn new(status: TapStatus, msg: impl ToString) -> Self {
        set_error(msg.to_string());
        Fail(status)
    }
}

type R<T> = Result<T, Fail>;

fn arg(msg: impl ToString) -> Fail {
    Fail::new(TapStatus::InvalidArgument, msg)
}

fn guard(f: impl FnOnce() -> R<()>) -> TapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TapStatus::Ok
        }
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("panic in tap-ffi");
            TapStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> R<&'a str> {
    if p.is_null() {
        return Err(arg(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg(format!("{what} is not UTF-8")))
}

unsafe fn bytes32(p: *const u8, what: &str) -> R<[u8; 32]> {
    if p.is_null() {
        return Err(arg(format!("{what} is null")));
    }
    Ok(*(p as *const [u8; 32]))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> R<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(arg(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> R<&'a mut T> {
    p.as_mut().ok_or_else(|| arg(format!("{what} is null")))
}

unsafe fn range(r: *const TapRange) -> R<RangeSpec> {
    let r = r.as_ref().ok_or_else(|| arg("range is null"))?;
    let types = slice(r.types, r.type_count, "range types")?.iter().map(|t| (t.lo, t.hi)).collect();
    RangeSpec::new(r.t_min, r.t_max, types).map_err(arg)
}

fn server_err(e: impl ToString) -> Fail {
    Fail::new(TapStatus::ServerError, e)
}

fn reject(e: impl ToString) -> Fail {
    Fail::new(TapStatus::VerificationFailed, e)
}

fn decode<M: wire::Message>(bytes: &[u8]) -> R<M> {
    wire::decode(bytes).map_err(|e| Fail::new(TapStatus::WireError, e))
}

fn emit(dst: *mut *mut TapBuffer, bytes: Vec<u8>) -> R<()> {
    let dst = unsafe { out(dst, "out")? };
    *dst = Box::into_raw(Box::new(TapBuffer(bytes)));
    Ok(())
}

/// Description of the last failure on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn tap_status_name(status: TapStatus) -> *const c_char {
    let s: &'static CStr = match status {
        TapStatus::Ok => c"ok",
        TapStatus::InvalidArgument => c"invalid argument",
        TapStatus::VerificationFailed => c"verification failed",
        TapStatus::ServerError => c"server error",
        TapStatus::WireError => c"wire error",
        TapStatus::Overflow => c"overflow",
        TapStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

// ---- buffers ----

#[no_mangle]
pub unsafe extern "C" fn tap_buffer_data(buf: *const TapBuffer) -> *const u8 {
    buf.as_ref().map_or(ptr::null(), |b| b.0.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn tap_buffer_len(buf: *const TapBuffer) -> usize {
    buf.as_ref().map_or(0, |b| b.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn tap_buffer_free(buf: *mut TapBuffer) {
    if !buf.is_null() {
        drop(Box::from_raw(buf));
    }
}

// ---- server ----

/// New in-memory server. `csv` (nullable) holds rows with a
/// `Time,ID,<types…>,Value` header; time-0 rows initialize it.
#[no_mangle]
pub unsafe extern "C" fn tap_server_new(
    schema_toml: *const c_char,
    key: *const u8,
    csv: *const c_char,
    out_server: *mut *mut TapServer,
) -> TapStatus {
    guard(|| {
        let schema = Schema::from_toml(str_arg(schema_toml, "schema")?).map_err(arg)?;
        let key = SecretKey::from_bytes(bytes32(key, "key")?);
        let csv = if csv.is_null() { "" } else { str_arg(csv, "csv")? };
        let epochs = ingest::parse_csv(csv.as_bytes(), &schema).map_err(arg)?;
        let dst = out(out_server, "out_server")?;
        let (server, _) = ingest::ingest_new(epochs, |init| {
            Server::initialize(schema, key, Arc::new(MemoryBulletin::new()), init)
        })
        .map_err(server_err)?;
        *dst = Box::into_raw(Box::new(TapServer(server)));
        Ok(())
    })
}

/// Reopens a server directory written by the `tap` tool.
#[no_mangle]
pub unsafe extern "C" fn tap_server_open(dir: *const c_char, out_server: *mut *mut TapServer) -> TapStatus {
    guard(|| {
        let server = Server::open(str_arg(dir, "dir")?).map_err(server_err)?;
        *out(out_server, "out_server")? = Box::into_raw(Box::new(TapServer(server)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_free(server: *mut TapServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

unsafe fn srv<'a>(s: *const TapServer) -> R<&'a Server> {
    s.as_ref().map(|s| &s.0).ok_or_else(|| arg("server is null"))
}

/// Appends the CSV's epochs, all later than the current one.
#[no_mangle]
pub unsafe extern "C" fn tap_server_ingest_csv(server: *mut TapServer, csv: *const c_char, out_epochs: *mut usize) -> TapStatus {
    guard(|| {
        let s = &mut server.as_mut().ok_or_else(|| arg("server is null"))?.0;
        let epochs = ingest::parse_csv(str_arg(csv, "csv")?.as_bytes(), s.schema()).map_err(arg)?;
        let summary = ingest::ingest_into(s, epochs).map_err(server_err)?;
        if let Some(o) = out_epochs.as_mut() {
            *o = summary.epochs;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_current_epoch(server: *const TapServer, out_epoch: *mut u32) -> TapStatus {
    guard(|| {
        *out(out_epoch, "out_epoch")? = srv(server)?.current_epoch();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_digest(server: *const TapServer, epoch: u32, out_digest: *mut u8) -> TapStatus {
    guard(|| {
        let d = srv(server)?.digest(epoch).map_err(server_err)?;
        if out_digest.is_null() {
            return Err(arg("out_digest is null"));
        }
        ptr::copy_nonoverlapping(d.as_bytes().as_ptr(), out_digest, 32);
        Ok(())
    })
}

/// The seed issued to `user` for `epoch`, as handed out on submission.
#[no_mangle]
pub unsafe extern "C" fn tap_server_user_seed(server: *const TapServer, user: *const c_char, epoch: u32, out_seed: *mut u8) -> TapStatus {
    guard(|| {
        let seed = srv(server)?.epoch_secret(str_arg(user, "user")?, epoch).to_be_bytes();
        if out_seed.is_null() {
            return Err(arg("out_seed is null"));
        }
        ptr::copy_nonoverlapping(seed.as_ptr(), out_seed, 32);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_lookup(
    server: *const TapServer,
    user: *const c_char,
    types: *const u32,
    type_count: usize,
    epoch: u32,
    out_proof: *mut *mut TapBuffer,
) -> TapStatus {
    guard(|| {
        let p = srv(server)?
            .lookup(str_arg(user, "user")?, slice(types, type_count, "types")?, epoch)
            .map_err(server_err)?;
        emit(out_proof, wire::encode(&p))
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_sum(server: *const TapServer, r: *const TapRange, at: u32, out_proof: *mut *mut TapBuffer) -> TapStatus {
    guard(|| {
        let p = srv(server)?.query_aggregate(&range(r)?, at).map_err(server_err)?;
        emit(out_proof, wire::encode(&p))
    })
}

fn extreme(m: TapExtreme) -> Extreme {
    match m {
        TapExtreme::Min => Extreme::Min,
        TapExtreme::Max => Extreme::Max,
    }
}

#[no_mangle]
pub unsafe extern "C" fn tap_server_minmax(
    server: *const TapServer,
    r: *const TapRange,
    mode: TapExtreme,
    at: u32,
    out_proof: *mut *mut TapBuffer,
) -> TapStatus {
    guard(|| {
        let p = srv(server)?.query_minmax(&range(r)?, extreme(mode), at).map_err(server_err)?;
        emit(out_proof, wire::encode(&p))
    })
}

/// `num/den`-quantile.
#[no_mangle]
pub unsafe extern "C" fn tap_server_quantile(
    server: *const TapServer,
    r: *const TapRange,
    num: u64,
    den: u64,
    at: u32,
    out_proof: *mut *mut TapBuffer,
) -> TapStatus {
    guard(|| {
        let q = Quantile::new(num, den).map_err(arg)?;
        let p = srv(server)?.query_quantile(&range(r)?, q, at).map_err(server_err)?;
        emit(out_proof, wire::encode(&p))
    })
}

/// Audit proof for the epochs after `from` up to `to`; `has_from = false`
/// audits from the empty tree.
#[no_mangle]
pub unsafe extern "C" fn tap_server_audit(
    server: *const TapServer,
    has_from: bool,
    from: u32,
    to: u32,
    out_proof: *mut *mut TapBuffer,
) -> TapStatus {
    guard(|| {
        let p = srv(server)?.audit_proof(has_from.then_some(from), to).map_err(server_err)?;
        emit(out_proof, wire::encode(&p))
    })
}

// ---- verifier ----

#[no_mangle]
pub unsafe extern "C" fn tap_verifier_new(schema_toml: *const c_char, out_verifier: *mut *mut TapVerifier) -> TapStatus {
    guard(|| {
        let schema = Schema::from_toml(str_arg(schema_toml, "schema")?).map_err(arg)?;
        let verifier = Verifier::new(&schema).map_err(arg)?;
        let auditor = Auditor::new(&schema).map_err(arg)?;
        *out(out_verifier, "out_verifier")? = Box::into_raw(Box::new(TapVerifier { verifier, auditor }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_verifier_free(v: *mut TapVerifier) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

unsafe fn ver<'a>(v: *const TapVerifier) -> R<&'a TapVerifier> {
    v.as_ref().ok_or_else(|| arg("verifier is null"))
}

unsafe fn digest(p: *const u8) -> R<Digest256> {
    Ok(Digest256(bytes32(p, "digest")?))
}

/// Checks that the proof shows `user`'s row with `value` under `seed`.
#[no_mangle]
pub unsafe extern "C" fn tap_verify_lookup(
    v: *const TapVerifier,
    user: *const c_char,
    types: *const u32,
    type_count: usize,
    epoch: u32,
    value: u64,
    seed: *const u8,
    proof: *const u8,
    proof_len: usize,
    digest32: *const u8,
) -> TapStatus {
    guard(|| {
        let seed = Scalar::from_be_bytes(&bytes32(seed, "seed")?).map_err(|_| arg("seed is not canonical"))?;
        let p: LookupProof = decode(slice(proof, proof_len, "proof")?)?;
        ver(v)?
            .verifier
            .verify_lookup(str_arg(user, "user")?, slice(types, type_count, "types")?, epoch, value, &seed, &p, &digest(digest32)?)
            .map_err(reject)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_verify_nonexistence(
    v: *const TapVerifier,
    user: *const c_char,
    types: *const u32,
    type_count: usize,
    epoch: u32,
    proof: *const u8,
    proof_len: usize,
    digest32: *const u8,
) -> TapStatus {
    guard(|| {
        let p: LookupProof = decode(slice(proof, proof_len, "proof")?)?;
        ver(v)?
            .verifier
            .verify_nonexistence(str_arg(user, "user")?, slice(types, type_count, "types")?, epoch, &p, &digest(digest32)?)
            .map_err(reject)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_verify_sum(
    v: *const TapVerifier,
    r: *const TapRange,
    proof: *const u8,
    proof_len: usize,
    digest32: *const u8,
    out_result: *mut TapAggregate,
) -> TapStatus {
    guard(|| {
        let p: AggregateProof = decode(slice(proof, proof_len, "proof")?)?;
        let res = ver(v)?.verifier.verify_aggregate(&range(r)?, &p, &digest(digest32)?).map_err(reject)?;
        let to_u64 = |i: usize| -> R<u64> {
            res.sums.get(i).map_or(Ok(0), |s| u64::try_from(s).map_err(|_| Fail::new(TapStatus::Overflow, "sum exceeds 64 bits")))
        };
        *out(out_result, "out_result")? = TapAggregate {
            count: res.count,
            sum: to_u64(0)?,
            sum_squares: to_u64(1)?,
            mean: res.mean().unwrap_or(f64::NAN),
            stddev: res.sample_stddev().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_verify_minmax(
    v: *const TapVerifier,
    r: *const TapRange,
    mode: TapExtreme,
    proof: *const u8,
    proof_len: usize,
    digest32: *const u8,
    out_value: *mut u64,
) -> TapStatus {
    guard(|| {
        let p: MinMaxProof = decode(slice(proof, proof_len, "proof")?)?;
        let value = ver(v)?.verifier.verify_minmax(&range(r)?, extreme(mode), &p, &digest(digest32)?).map_err(reject)?;
        *out(out_value, "out_value")? = value;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tap_verify_quantile(
    v: *const TapVerifier,
    r: *const TapRange,
    num: u64,
    den: u64,
    proof: *const u8,
    proof_len: usize,
    digest32: *const u8,
    out_value: *mut u64,
) -> TapStatus {
    guard(|| {
        let q = Quantile::new(num, den).map_err(arg)?;
        let p: QuantileProof = decode(slice(proof, proof_len, "proof")?)?;
        let value = ver(v)?.verifier.verify_quantile(&range(r)?, q, &p, &digest(digest32)?).map_err(reject)?;
        *out(out_value, "out_value")? = value;
        Ok(())
    })
}

/// Audits `from → to` against the given bulletin digests. `old_digest` is
/// ignored when `has_from` is false. Returns `VerificationFailed` with the
/// report filled in when the audit finds problems.
#[no_mangle]
pub unsafe extern "C" fn tap_verify_audit(
    v: *const TapVerifier,
    has_from: bool,
    from: u32,
    to: u32,
    old_digest: *const u8,
    new_digest: *const u8,
    proof: *const u8,
    proof_len: usize,
    out_report: *mut TapAuditReport,
) -> TapStatus {
    guard(|| {
        let p: AuditProof = decode(slice(proof, proof_len, "proof")?)?;
        let bulletin = MemoryBulletin::new();
        let from: Option<Epoch> = has_from.then_some(from);
        if let Some(f) = from {
            if f > to {
                return Err(arg("from is after to"));
            }
            bulletin.publish(f as u64, digest(old_digest)?).map_err(arg)?;
        }
        bulletin.publish(to as u64, digest(new_digest)?).map_err(arg)?;
        let report = ver(v)?.auditor.epoch_check(from, to, &p, &bulletin);
        *out(out_report, "out_report")? = TapAuditReport {
            passed: report.passed(),
            new_buckets: report.new_buckets,
            buckets_checked: report.buckets_checked,
            sortedness_checked: report.sortedness_checked,
            bounds_checked: report.bounds_checked,
            findings: report.findings.len(),
        };
        if report.passed() {
            Ok(())
        } else {
            let msg: Vec<String> = report.findings.iter().map(ToString::to_string).collect();
            Err(reject(msg.join("; ")))
        }
    })
}
