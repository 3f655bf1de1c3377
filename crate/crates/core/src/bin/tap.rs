//! `tap`: server, client and auditor tools.
//!
//! Exit codes: 0 ok, 1 verification failed, 2 usage error, 3 server error.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tap_core::auditor::Auditor;
use tap_core::bench::{self, Workload};
use tap_core::bulletin::{Bulletin, FileBulletin, MemoryBulletin};
use tap_core::crypto::{Digest256, Scalar};
use tap_core::dp::{self, NoiseDistribution};
use tap_core::ingest;
use tap_core::prefix_tree::{Epoch, RangeSpec};
use tap_core::proofs::{Extreme, Quantile};
use tap_core::schema::Schema;
use tap_core::server::{SecretKey, Server};
use tap_core::service::{self, Client, ClientError};
use tap_core::verifier::{Expectation, Statistic, Verifier};

#[derive(Parser)]
#[command(name = "tap", version, about = "Transparent, privacy-preserving data service")]
struct Cli {
    /// TOML file supplying defaults for url, dir, listen and bulletin.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve a server directory over HTTP.
    Serve {
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Load a CSV into a server directory, creating it if needed.
    Ingest {
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
        /// Schema for a new directory.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Write each inserted row's seed as `Time,ID,Seed` for handing to users.
        #[arg(long)]
        seeds_out: Option<PathBuf>,
    },
    /// Verified look-up of one user's row.
    Lookup {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        user: String,
        /// Type labels or codes, `;`-separated per attribute.
        #[arg(long, default_value = "")]
        types: String,
        #[arg(long)]
        epoch: Epoch,
        /// The value the user reported; omit with --absent.
        #[arg(long)]
        value: Option<u64>,
        /// The user's seed for that epoch, 64 hex digits.
        #[arg(long)]
        seed: Option<String>,
        /// Expect no row instead.
        #[arg(long)]
        absent: bool,
    },
    /// Verified sum, count, average and standard deviation.
    Sum {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Verified minimum or maximum.
    Minmax {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long, default_value = "min")]
        mode: Extreme,
    },
    /// Verified quantile.
    Quantile {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        range: RangeArgs,
        /// Level as a decimal or `a/b`.
        #[arg(long, default_value = "0.5")]
        q: Quantile,
    },
    /// Audit the epochs after `from` up to `to`.
    Audit {
        #[command(flatten)]
        conn: Conn,
        /// Omit to audit from the empty tree.
        #[arg(long)]
        from: Option<Epoch>,
        #[arg(long)]
        to: Option<Epoch>,
        /// Check only this fraction of new buckets.
        #[arg(long, requires = "sample_seed")]
        fraction: Option<f64>,
        #[arg(long)]
        sample_seed: Option<u64>,
    },
    /// Check a user's expected rows; one record per epoch.
    Monitor {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        user: String,
        /// CSV `Time,<types…>,Value,Seed`; empty Value expects no row.
        #[arg(long)]
        expect: PathBuf,
    },
    /// Proof sizes and timing splits on a synthetic workload.
    Bench {
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 4)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        regions: u32,
        #[arg(long, default_value_t = 0.2)]
        industrial: f64,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write per-query records here as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Privacy parameters of a bounded noise distribution.
    DpEval {
        /// Noise bound.
        #[arg(long)]
        b: u64,
        #[arg(long, default_value_t = 1)]
        sensitivity: u64,
        /// `uniform` or `geometric:<ratio>`.
        #[arg(long, default_value = "uniform")]
        dist: String,
        /// Laplace scale for the unbounded baseline.
        #[arg(long)]
        laplace_sigma: Option<f64>,
    },
}

#[derive(Args)]
struct Conn {
    /// Service base URL.
    #[arg(long)]
    url: Option<String>,
    /// Bulletin log to take digests from; defaults to asking the service.
    #[arg(long)]
    bulletin: Option<PathBuf>,
    /// Print proofs in the text wire format.
    #[arg(long)]
    show_proof: bool,
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long)]
    t_min: Option<Epoch>,
    #[arg(long)]
    t_max: Option<Epoch>,
    /// Per-attribute bounds, `;`-separated: `*`, a label/code, or `lo-hi`.
    #[arg(long, default_value = "")]
    types: String,
    /// Digest epoch; defaults to the latest.
    #[arg(long)]
    at: Option<Epoch>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    url: Option<String>,
    dir: Option<PathBuf>,
    listen: Option<String>,
    bulletin: Option<PathBuf>,
}

enum Failure {
    Verify(String),
    Usage(String),
    Server(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Server(_) => 3,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Server { status, .. } if (400..500).contains(&status) && status != 404 => Failure::Usage(e.to_string()),
            _ => Failure::Server(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn server_err(e: impl ToString) -> Failure {
    Failure::Server(e.to_string())
}

struct Session {
    client: Client,
    schema: Schema,
    verifier: Verifier,
    /// When set, digests come only from this bulletin log.
    log: Option<Arc<FileBulletin>>,
    fetched: RefCell<HashMap<Epoch, Digest256>>,
    show_proof: bool,
}

impl Session {
    fn open(conn: &Conn, cfg: &Config) -> Result<Self, Failure> {
        let url = conn.url.clone().or(cfg.url.clone()).ok_or_else(|| usage("no --url given and none in the config"))?;
        let client = Client::new(&url);
        let schema = client.schema()?;
        let verifier = Verifier::new(&schema).map_err(server_err)?;
        let log = match conn.bulletin.clone().or(cfg.bulletin.clone()) {
            Some(p) => Some(Arc::new(FileBulletin::open(p).map_err(usage)?)),
            None => None,
        };
        Ok(Session { client, schema, verifier, log, fetched: RefCell::default(), show_proof: conn.show_proof })
    }

    /// Digest for `epoch`: from the bulletin log when configured, else from the service.
    fn digest(&self, epoch: Epoch) -> Result<Digest256, Failure> {
        if let Some(log) = &self.log {
            return log.get(epoch as u64).map_err(|e| Failure::Verify(e.to_string()));
        }
        if let Some(d) = self.fetched.borrow().get(&epoch) {
            return Ok(*d);
        }
        let d = self.client.digest(Some(epoch))?;
        if d.epoch != epoch {
            return Err(Failure::Verify(format!("asked for the digest of epoch {epoch}, got {}", d.epoch)));
        }
        self.fetched.borrow_mut().insert(epoch, d.digest);
        Ok(d.digest)
    }

    /// Bulletin covering epochs `0..=to` for the auditor.
    fn bulletin_upto(&self, to: Epoch) -> Result<Box<dyn Bulletin>, Failure> {
        if let Some(log) = &self.log {
            return Ok(Box::new(log.clone()));
        }
        let b = MemoryBulletin::new();
        for t in 0..=to {
            b.publish(t as u64, self.digest(t)?).map_err(|e| Failure::Verify(e.to_string()))?;
        }
        Ok(Box::new(b))
    }

    fn latest(&self) -> Result<Epoch, Failure> {
        Ok(self.client.digest(None)?.epoch)
    }

    fn range(&self, r: &RangeArgs) -> Result<(RangeSpec, Epoch), Failure> {
        let at = match r.at {
            Some(a) => a,
            None => self.latest()?,
        };
        let types = service::parse_type_ranges(&r.types, &self.schema).map_err(usage)?;
        let spec = RangeSpec::new(r.t_min.unwrap_or(0), r.t_max.unwrap_or(at), types).map_err(usage)?;
        Ok((spec, at))
    }

    fn show<M: tap_core::wire::Message>(&self, m: &M) {
        if self.show_proof {
            eprintln!("{}", tap_core::wire::to_text(m));
        }
    }
}

fn parse_seed(hex_str: &str) -> Result<Scalar, Failure> {
    let bytes: [u8; 32] = hex::decode(hex_str.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| usage("seed must be 64 hex digits"))?;
    Scalar::from_be_bytes(&bytes).map_err(|_| usage("seed is not a canonical scalar"))
}

fn single_codes(types: &str, schema: &Schema) -> Result<Vec<u32>, Failure> {
    let ranges = service::parse_type_ranges(types, schema).map_err(usage)?;
    if ranges.iter().any(|(lo, hi)| lo != hi) {
        return Err(usage("give exactly one type per attribute"));
    }
    Ok(ranges.into_iter().map(|(c, _)| c).collect())
}

fn dir_of(dir: Option<PathBuf>, cfg: &Config) -> Result<PathBuf, Failure> {
    dir.or(cfg.dir.clone()).ok_or_else(|| usage("no --dir given and none in the config"))
}

fn serve(dir: PathBuf, listen: String) -> Outcome {
    let server = Server::open(&dir).map_err(server_err)?;
    eprintln!("serving {} on {listen} (epoch {})", dir.display(), server.current_epoch());
    service::serve_forever(server, &listen).map_err(server_err)
}

fn ingest_cmd(dir: PathBuf, csv: &Path, schema: Option<PathBuf>, seeds_out: Option<PathBuf>) -> Outcome {
    let exists = dir.join("schema.toml").exists();
    let schema = if exists {
        Schema::from_toml(&std::fs::read_to_string(dir.join("schema.toml")).map_err(server_err)?).map_err(server_err)?
    } else {
        let p = schema.ok_or_else(|| usage("a new directory needs --schema"))?;
        Schema::from_toml(&std::fs::read_to_string(&p).map_err(usage)?).map_err(usage)?
    };
    let file = std::fs::File::open(csv).map_err(usage)?;
    let epochs = ingest::parse_csv(file, &schema).map_err(usage)?;
    let rows: Vec<(Epoch, String)> = epochs.values().flatten().map(|r| (r.time, r.user_id.clone())).collect();
    let (server, summary) = if exists {
        let mut s = Server::open(&dir).map_err(server_err)?;
        let summary = ingest::ingest_into(&mut s, epochs).map_err(usage)?;
        (s, summary)
    } else {
        let key = SecretKey::generate(&mut rand::rngs::OsRng);
        ingest::ingest_new(epochs, |init| Server::create(&dir, schema, key, init)).map_err(usage)?
    };
    if let Some(p) = seeds_out {
        let mut out = String::from("Time,ID,Seed\n");
        for (t, u) in rows {
            out.push_str(&format!("{t},{u},{}\n", hex::encode(server.epoch_secret(&u, t).to_be_bytes())));
        }
        std::fs::write(p, out).map_err(server_err)?;
    }
    println!("epochs={} rows={} latest={}", summary.epochs, summary.rows, server.current_epoch());
    for e in server.bulletin().entries() {
        println!("digest epoch={} {}", e.epoch, e.digest);
    }
    Ok(())
}

fn read_expectations(path: &Path, schema: &Schema) -> Result<Vec<Expectation>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(usage)?;
    let k = schema.type_count();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(usage)?;
        if rec.len() != k + 3 {
            return Err(usage(format!("expectation rows need {} fields", k + 3)));
        }
        let epoch = rec[0].parse().map_err(usage)?;
        let types = (0..k).map(|a| schema.code(a, &rec[1 + a]).map_err(usage)).collect::<Result<_, _>>()?;
        let value = if rec[1 + k].is_empty() { None } else { Some(rec[1 + k].parse().map_err(usage)?) };
        out.push(Expectation { epoch, types, value, seed: parse_seed(&rec[2 + k])? });
    }
    Ok(out)
}

fn dp_eval(b: u64, sensitivity: u64, dist: &str, sigma: Option<f64>) -> Outcome {
    let d = match dist.split_once(':') {
        None if dist == "uniform" => NoiseDistribution::uniform(b),
        Some(("geometric", r)) => NoiseDistribution::truncated_geometric(b, r.parse().map_err(usage)?).map_err(usage)?,
        _ => return Err(usage(format!("unknown distribution {dist:?}"))),
    };
    let p = dp::mechanism_epsilon_delta(&d, sensitivity).map_err(usage)?;
    let ok = dp::dp_oracle_check(&d, sensitivity, p.epsilon, p.delta);
    println!("b={b} sensitivity={sensitivity} dist={dist} epsilon={} delta={} oracle={}", p.epsilon, p.delta, if ok { "pass" } else { "fail" });
    if let Some(s) = sigma {
        let (_, eps) = dp::laplace_baseline(sensitivity, s).map_err(usage)?;
        println!("laplace sigma={s} epsilon={eps} delta=0");
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Verify("parameters fail the brute-force check".into()))
    }
}

fn run(cli: Cli) -> Outcome {
    let cfg: Config = match &cli.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p).map_err(usage)?).map_err(usage)?,
        None => Config::default(),
    };
    match cli.cmd {
        Cmd::Serve { dir, listen } => {
            let listen = listen.or(cfg.listen.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
            serve(dir_of(dir, &cfg)?, listen)
        }
        Cmd::Ingest { dir, csv, schema, seeds_out } => ingest_cmd(dir_of(dir, &cfg)?, &csv, schema, seeds_out),
        Cmd::Lookup { conn, user, types, epoch, value, seed, absent } => {
            let s = Session::open(&conn, &cfg)?;
            let codes = single_codes(&types, &s.schema)?;
            let proof = s.client.lookup(&user, &codes, epoch)?;
            s.show(&proof);
            let digest = s.digest(epoch)?;
            let res = match (absent, value, seed) {
                (true, None, _) => s.verifier.verify_nonexistence(&user, &codes, epoch, &proof, &digest),
                (false, Some(v), Some(seed)) => s.verifier.verify_lookup(&user, &codes, epoch, v, &parse_seed(&seed)?, &proof, &digest),
                _ => return Err(usage("give --value and --seed, or --absent")),
            };
            res.map_err(|r| Failure::Verify(r.to_string()))?;
            println!("user={user} epoch={epoch} {}", if absent { "absent=verified" } else { "present=verified" });
            Ok(())
        }
        Cmd::Sum { conn, range } => {
            let s = Session::open(&conn, &cfg)?;
            let (spec, at) = s.range(&range)?;
            let proof = s.client.sum(&spec, at)?;
            s.show(&proof);
            let r = s.verifier.verify_aggregate(&spec, &proof, &s.digest(at)?).map_err(|e| Failure::Verify(e.to_string()))?;
            let opt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| v.to_string());
            println!(
                "count={} sum={} sum_squares={} average={} stddev={}",
                r.count,
                r.sums[0],
                r.sums.get(1).map_or("-".into(), |v| v.to_string()),
                opt(r.statistic(Statistic::Average)),
                opt(r.statistic(Statistic::StdDev))
            );
            Ok(())
        }
        Cmd::Minmax { conn, range, mode } => {
            let s = Session::open(&conn, &cfg)?;
            let (spec, at) = s.range(&range)?;
            let proof = s.client.minmax(&spec, mode, at)?;
            s.show(&proof);
            let v = s.verifier.verify_minmax(&spec, mode, &proof, &s.digest(at)?).map_err(|e| Failure::Verify(e.to_string()))?;
            println!("{}={v}", if mode == Extreme::Min { "min" } else { "max" });
            Ok(())
        }
        Cmd::Quantile { conn, range, q } => {
            let s = Session::open(&conn, &cfg)?;
            let (spec, at) = s.range(&range)?;
            let proof = s.client.quantile(&spec, q, at)?;
            s.show(&proof);
            let v = s.verifier.verify_quantile(&spec, q, &proof, &s.digest(at)?).map_err(|e| Failure::Verify(e.to_string()))?;
            println!("quantile={q} value={v}");
            Ok(())
        }
        Cmd::Audit { conn, from, to, fraction, sample_seed } => {
            let s = Session::open(&conn, &cfg)?;
            let to = match to {
                Some(t) => t,
                None => s.latest()?,
            };
            let bulletin = s.bulletin_upto(to)?;
            let auditor = Auditor::new(&s.schema).map_err(server_err)?;
            let sample = fraction.zip(sample_seed);
            let proof = s.client.audit(from, to, sample)?;
            s.show(&proof);
            let report = match sample {
                Some((f, seed)) => auditor.randomized_audit(from, to, &proof, bulletin.as_ref(), f, seed),
                None => auditor.epoch_check(from, to, &proof, bulletin.as_ref()),
            };
            println!(
                "from={} to={to} new_buckets={} checked={} sortedness={} bounds={} result={}",
                from.map_or("genesis".into(), |f| f.to_string()),
                report.new_buckets,
                report.buckets_checked,
                report.sortedness_checked,
                report.bounds_checked,
                if report.passed() { "pass" } else { "fail" }
            );
            for f in &report.findings {
                println!("finding {f}");
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Verify("audit failed".into()))
            }
        }
        Cmd::Monitor { conn, user, expect } => {
            let s = Session::open(&conn, &cfg)?;
            let expectations = read_expectations(&expect, &s.schema)?;
            let report = s.verifier.monitor(&user, &expectations, |e| {
                let proof = s.client.lookup(&user, &e.types, e.epoch).map_err(|e| e.to_string())?;
                let digest = s.digest(e.epoch).map_err(|f| match f {
                    Failure::Verify(m) | Failure::Usage(m) | Failure::Server(m) => m,
                })?;
                Ok((proof, digest))
            });
            print!("{}", report.to_records());
            if report.is_clean() {
                Ok(())
            } else {
                Err(Failure::Verify("monitoring found discrepancies".into()))
            }
        }
        Cmd::Bench { users, epochs, regions, industrial, window, reps, seed, out } => {
            let w = Workload { users, epochs, regions, industrial_fraction: industrial, window, seed, ..Workload::default() };
            w.validate().map_err(usage)?;
            let (server, _) = w.build();
            let records = bench::run(&w, &server, reps.max(1));
            if let Some(p) = out {
                std::fs::write(p, bench::to_csv(&records)).map_err(server_err)?;
            }
            let summary = bench::summarize(&records);
            for kind in bench::KINDS {
                let rs: Vec<_> = records.iter().filter(|r| r.kind == kind).collect();
                let mean = |f: &dyn Fn(&bench::BenchRecord) -> std::time::Duration| {
                    rs.iter().map(|r| f(r).as_secs_f64()).sum::<f64>() / rs.len() as f64 * 1e3
                };
                println!(
                    "{kind:<13} bytes={:<8} prefix_gen={:.3}ms prefix_verify={:.3}ms sum_gen={:.3}ms sum_verify={:.3}ms other={:.3}ms total={:.3}ms",
                    summary.sizes[kind],
                    mean(&|r| r.prefix_gen),
                    mean(&|r| r.prefix_verify),
                    mean(&|r| r.sum_gen),
                    mean(&|r| r.sum_verify),
                    mean(&|r| r.other),
                    mean(&|r| r.total)
                );
            }
            println!("size_ordering={} median_ge_p05={}", summary.ordering_holds, summary.median_at_least_p05);
            Ok(())
        }
        Cmd::DpEval { b, sensitivity, dist, laplace_sigma } => dp_eval(b, sensitivity, &dist, laplace_sigma),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (label, msg) = match &f {
                Failure::Verify(m) => ("verification failed", m),
                Failure::Usage(m) => ("usage", m),
                Failure::Server(m) => ("server", m),
            };
            eprintln!("tap: {label}: {msg}");
            ExitCode::from(f.code())
        }
    }
}

