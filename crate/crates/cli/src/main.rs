//! `sfb`: generate, convert, curate, inspect and simulate scenario databases.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sfb_core::bridge::{run_session, serve_stdio, BridgeConfig, BridgeServer, ScenarioProvider};
use sfb_core::db::{self, Database, FilterPredicate};
use sfb_core::metrics::episode_metrics;
use sfb_core::pg::{generate_scenario, PgConfig};
use sfb_core::render::render_episode;
use sfb_core::scenario::{convert_log_file, read_scenario, ScenarioDescription};
use sfb_core::sim::{Mode, PolicyBinding, SimConfig};
use sfb_core::Error;

mod exit {
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const DATA: u8 = 4;
    pub const PARTIAL: u8 = 5;
    pub const PROTOCOL: u8 = 6;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::OutDirNotEmpty(_) => exit::IO,
            Error::Protocol(_) => exit::PROTOCOL,
            Error::Config(_) | Error::Predicate(_) | Error::BadFractions { .. } | Error::SampleTooLarge { .. } => exit::USAGE,
            _ => exit::DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail<T>(code: u8, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        code,
        message: message.into(),
    })
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "sfb", version, about = "Scenario database and driving simulator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural scenarios into a new database.
    PgGen(PgGenArgs),
    /// Convert a directory of frame logs (*.jsonl) into a database.
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Combine databases without copying scenario files.
    Merge {
        #[arg(required = true)]
        dbs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep scenarios whose metadata satisfies every clause.
    Filter {
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clause like `ego_moving_distance>10` or `source==pg`; repeatable.
        #[arg(long = "filter")]
        filters: Vec<String>,
        /// Drop scenes whose ego altitude span exceeds this many meters.
        #[arg(long)]
        max_altitude_range: Option<f64>,
    },
    /// Random disjoint train/test split into `<out>/train` and `<out>/test`.
    Split {
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train: f64,
        #[arg(long, default_value_t = 0.2)]
        test: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Uniform sample without replacement.
    Sample {
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Drop scenarios that fail to parse, validate or load into the simulator.
    Check {
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summary statistics table.
    Stats {
        db: PathBuf,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
    /// Write one SVG per frame of a recorded scenario.
    Replay {
        /// Database directory or a single scenario file.
        source: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop rollouts; writes metrics JSON.
    Sim(SimArgs),
    /// Serve env-input control over the line protocol.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct PgGenArgs {
    /// Inclusive range `a..b`, a single seed, or a comma list.
    #[arg(long)]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON generator config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_blocks: Option<usize>,
    #[arg(long)]
    traffic_density: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    lanes_per_road: Option<usize>,
    #[arg(long)]
    construction_prob: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimPolicy {
    Idm,
    Replay,
    Bridge,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(clap::Args)]
struct SimArgs {
    /// Database directory or a single scenario file.
    source: PathBuf,
    #[arg(long, value_enum, default_value = "idm")]
    policy: SimPolicy,
    /// Metrics JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON simulator config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `host:port` or `-` for standard streams (bridge policy only).
    #[arg(long, default_value = "-")]
    endpoint: String,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(clap::Args)]
struct ServeArgs {
    db: PathBuf,
    /// `host:port` or `-` for standard streams.
    #[arg(long, default_value = "127.0.0.1:7878")]
    endpoint: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds to wait for a client message.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

/// Relative database paths are taken from `SCENARIO_DB_ROOT` when it is set.
fn db_path(p: &Path) -> PathBuf {
    match std::env::var_os("SCENARIO_DB_ROOT") {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn open_db(p: &Path) -> Result<Database, Failure> {
    Ok(Database::open(db_path(p))?)
}

fn workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure {
        code: exit::USAGE,
        message: format!("cannot parse seeds {spec:?}; use a..b, a..=b, n or a,b,c"),
    };
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(num).collect()
}

/// Config file merged under explicit flag values.
fn load_config<T: serde::de::DeserializeOwned + serde::Serialize + Default>(
    path: Option<&Path>,
    overrides: Value,
) -> Result<T, Failure> {
    let mut base = serde_json::to_value(T::default()).expect("config serializes");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        }))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Failure {
            code: exit::USAGE,
            message: format!("{}: {e}", path.display()),
        })?;
        merge_json(&mut base, file);
    }
    merge_json(&mut base, overrides);
    serde_json::from_value(base).map_err(|e| Failure {
        code: exit::USAGE,
        message: format!("invalid configuration: {e}"),
    })
}

fn merge_json(base: &mut Value, top: Value) {
    if top.is_null() {
        return;
    }
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None if !v.is_null() => {
                        b.insert(k, v);
                    }
                    None => {}
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n"));
}

fn print_json(v: &Value) {
    emit(&serde_json::to_string_pretty(v).expect("json prints"));
}

fn report_failures(kind: &str, n: usize) -> CliResult {
    if n > 0 {
        return fail(exit::PARTIAL, format!("{n} {kind} failed; see the report above"));
    }
    Ok(())
}

fn pg_gen(a: PgGenArgs) -> CliResult {
    let seeds = parse_seeds(&a.seeds)?;
    let overrides = json!({
        "num_blocks": a.num_blocks,
        "traffic_density": a.traffic_density,
        "duration_s": a.duration_s,
        "dt": a.dt,
        "lanes_per_road": a.lanes_per_road,
        "construction_prob": a.construction_prob,
    });
    let cfg: PgConfig = load_config(a.config.as_deref(), overrides)?;
    cfg.validate()?;
    let out = db::build_database(
        |seed: &u64| generate_scenario(&PgConfig { seed: *seed, ..cfg.clone() }),
        &seeds,
        db_path(&a.out),
        workers(a.workers),
    )?;
    for f in &out.failures {
        eprintln!("seed {}: {}", f.input, f.error);
    }
    eprintln!("wrote {} scenarios to {}", out.database.len(), out.database.dir().display());
    report_failures("seeds", out.failures.len())
}

fn convert(input: PathBuf, out: PathBuf, w: Option<usize>) -> CliResult {
    let entries = std::fs::read_dir(&input).map_err(|e| Failure::from(Error::Io {
        path: input.clone(),
        source: e,
    }))?;
    let mut logs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "jsonl"))
        .collect();
    logs.sort();
    if logs.is_empty() {
        return fail(exit::DATA, format!("no .jsonl logs in {}", input.display()));
    }
    let built = db::build_database(|p: &PathBuf| convert_log_file(p), &logs, db_path(&out), workers(w))?;
    for f in &built.failures {
        eprintln!("{}: {}", f.input, f.error);
    }
    eprintln!("wrote {} scenarios to {}", built.database.len(), built.database.dir().display());
    report_failures("logs", built.failures.len())
}

/// A single scenario file or one scenario of a database.
fn load_one(source: &Path, id: Option<&str>) -> Result<ScenarioDescription, Failure> {
    let path = db_path(source);
    if path.is_file() {
        return Ok(read_scenario(&path)?);
    }
    let db = Database::open(&path)?;
    let id = match id {
        Some(id) => id.to_string(),
        None => match db.ids().next() {
            Some(first) => first.to_string(),
            None => return fail(exit::DATA, "database is empty"),
        },
    };
    if db.metadata(&id).is_err() {
        return fail(exit::DATA, format!("no scenario {id:?} in {}", path.display()));
    }
    Ok(db.read(&id)?)
}

fn replay(source: PathBuf, id: Option<String>, out: PathBuf) -> CliResult {
    let desc = load_one(&source, id.as_deref())?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::from(Error::Io {
        path: out.clone(),
        source: e,
    }))?;
    let frames = render_episode(&desc);
    for (i, svg) in frames.iter().enumerate() {
        let path = out.join(format!("frame_{i:04}.svg"));
        std::fs::write(&path, svg).map_err(|e| Failure::from(Error::Io { path, source: e }))?;
    }
    eprintln!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn sim_config(path: Option<&Path>, overrides: Value) -> Result<SimConfig, Failure> {
    load_config(path, overrides)
}

fn sim(a: SimArgs) -> CliResult {
    let mut cfg = sim_config(a.config.as_deref(), Value::Null)?;
    match a.policy {
        SimPolicy::Idm => cfg.ego_policy = PolicyBinding::Idm,
        SimPolicy::Replay => cfg.ego_policy = PolicyBinding::Replay,
        SimPolicy::Bridge => {}
    }
    if a.policy != SimPolicy::Bridge {
        cfg.mode = Mode::Single;
        cfg.observe = false;
    }
    let path = db_path(&a.source);
    let (records, failures) = if a.policy == SimPolicy::Bridge {
        cfg.ego_policy = PolicyBinding::EnvInput;
        let provider: Arc<dyn ScenarioProvider> = if path.is_file() {
            let desc = read_scenario(&path)?;
            Arc::new(std::iter::once((desc.scenario_id.clone(), Arc::new(desc))).collect::<std::collections::BTreeMap<_, _>>())
        } else {
            Arc::new(Database::open(&path)?)
        };
        let bridge = BridgeConfig {
            sim: cfg,
            timeout: Duration::from_secs_f64(a.timeout),
        };
        let log = if a.endpoint == "-" {
            serve_stdio(provider.as_ref(), &bridge)
        } else {
            let listener = std::net::TcpListener::bind(&a.endpoint)
                .map_err(|e| Failure::from(Error::Protocol(format!("cannot bind {}: {e}", a.endpoint))))?;
            let (stream, _) = listener
                .accept()
                .map_err(|e| Failure::from(Error::Protocol(format!("accept failed: {e}"))))?;
            let read = stream
                .try_clone()
                .map_err(|e| Failure::from(Error::Protocol(e.to_string())))?;
            run_session("sim".into(), std::io::BufReader::new(read), &stream, provider.as_ref(), &bridge)
        };
        let records: Vec<_> = log.episodes.iter().flat_map(|e| e.records.clone()).collect();
        if log.close_reason != "bye" && log.close_reason != "eof" {
            eprintln!("session closed: {}", log.close_reason);
        }
        (records, Vec::new())
    } else if path.is_file() {
        let desc = read_scenario(&path)?;
        let mut world = sfb_core::sim::World::new(Arc::new(desc), cfg)?;
        world.run_to_end()?;
        (world.episode_records(), Vec::new())
    } else {
        let db = Database::open(&path)?;
        db::rollout_database(&db, &cfg, workers(a.workers))?
    };
    for f in &failures {
        eprintln!("{}: {}", f.scenario_id, f.reason);
    }
    let summary = if records.is_empty() {
        Value::Null
    } else {
        serde_json::to_value(episode_metrics(&records)?).expect("summary serializes")
    };
    let doc = json!({ "summary": summary, "episodes": records });
    match &a.out {
        Some(p) => {
            let text = serde_json::to_string_pretty(&doc).expect("json prints") + "\n";
            std::fs::write(p, text).map_err(|e| Failure::from(Error::Io {
                path: p.clone(),
                source: e,
            }))?;
        }
        None => print_json(&doc),
    }
    report_failures("scenarios", failures.len())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut cfg = sim_config(a.config.as_deref(), json!({ "noise_seed": a.seed }))?;
    match a.mode {
        Some(ModeArg::Single) => {
            cfg = SimConfig {
                mode: Mode::Single,
                rewards: SimConfig::single().rewards,
                ..cfg
            }
        }
        Some(ModeArg::Multi) => {
            cfg = SimConfig {
                mode: Mode::Multi,
                rewards: SimConfig::multi().rewards,
                ..cfg
            }
        }
        None => {}
    }
    if cfg.mode == Mode::Traffic {
        return fail(exit::USAGE, "serve needs single or multi mode");
    }
    let db: Arc<dyn ScenarioProvider> = Arc::new(open_db(&a.db)?);
    let bridge = BridgeConfig {
        sim: cfg,
        timeout: Duration::from_secs_f64(a.timeout),
    };
    if a.endpoint == "-" {
        let log = serve_stdio(db.as_ref(), &bridge);
        return match log.close_reason.as_str() {
            "bye" | "eof" => Ok(()),
            other => fail(exit::PROTOCOL, format!("session closed: {other}")),
        };
    }
    let server = BridgeServer::bind(&a.endpoint, db, bridge)?;
    eprintln!("listening on {}", server.local_addr()?);
    Ok(server.run()?)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::PgGen(a) => pg_gen(a),
        Command::Convert { input, out, workers: w } => convert(input, out, w),
        Command::Merge { dbs, out } => {
            let opened = dbs.iter().map(|p| open_db(p)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Database> = opened.iter().collect();
            let merged = db::merge(&refs, db_path(&out))?;
            eprintln!("merged {} scenarios", merged.len());
            Ok(())
        }
        Command::Filter {
            db: src,
            out,
            filters,
            max_altitude_range,
        } => {
            let mut pred = FilterPredicate::parse(&filters)?;
            if let Some(t) = max_altitude_range {
                pred = pred.and(FilterPredicate::no_overpass(t));
            }
            let source = open_db(&src)?;
            let kept = db::filter(&source, &pred, db_path(&out))?;
            eprintln!("kept {} of {} scenarios", kept.len(), source.len());
            Ok(())
        }
        Command::Split {
            db: src,
            out,
            train,
            test,
            seed,
        } => {
            let source = open_db(&src)?;
            let out = db_path(&out);
            let (a, b) = db::split(&source, train, test, seed, out.join("train"), out.join("test"))?;
            eprintln!("train {} / test {}", a.len(), b.len());
            Ok(())
        }
        Command::Sample { db: src, out, n, seed } => {
            let source = open_db(&src)?;
            db::sample(&source, n, seed, db_path(&out))?;
            Ok(())
        }
        Command::Check { db: src, out, workers: w } => {
            let source = open_db(&src)?;
            let (clean, report) = db::sanity_check(&source, db_path(&out), workers(w))?;
            for f in &report.failures {
                eprintln!("{}: {}", f.scenario_id, f.reason);
            }
            eprintln!("{} of {} scenarios passed", clean.len(), report.checked);
            report_failures("scenarios", report.failures.len())
        }
        Command::Stats { db: src, json } => {
            let table = db::stats(&open_db(&src)?)?;
            if json {
                print_json(&serde_json::to_value(&table).expect("stats serialize"));
            } else {
                emit(&table.to_string());
            }
            Ok(())
        }
        Command::Replay { source, id, out } => replay(source, id, out),
        Command::Sim(a) => sim(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
