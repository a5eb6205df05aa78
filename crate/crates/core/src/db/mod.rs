//! Copy-free scenario databases.
//!
//! A database is a directory holding two manifests: `db_summary.json` maps
//! each scenario id to its metadata and `db_mapping.json` maps it to a scenario
//! file path relative to the directory. Derived databases only write new
//! manifests whose paths point back at the original files.

mod predicate;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EpisodeRecord;
use crate::scenario::{encode_scenario, read_scenario, validate_scenario, ScenarioDescription, ScenarioMetadata, SIF_EXTENSION};
use crate::sim::{SimConfig, World};

pub use predicate::{Clause, CmpOp, FilterPredicate, NUMERIC_FIELDS, TAG_FIELDS};
pub use stats::{compute_stats, has_intersection, MeanStd, StatsTable};

pub const SUMMARY_FILE: &str = "db_summary.json";
pub const MAPPING_FILE: &str = "db_mapping.json";
pub const FAILURES_FILE: &str = "failures.jsonl";

/// Default altitude span above which a scene is treated as an overpass.
pub const OVERPASS_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    dir: PathBuf,
    summary: BTreeMap<String, ScenarioMetadata>,
    mapping: BTreeMap<String, String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Manifest(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Resolves `.` and `..` without touching the file system.
fn lexical_normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

fn relative_path(target: &Path, base: &Path) -> Result<String> {
    let rel = pathdiff::diff_paths(target, base)
        .ok_or_else(|| Error::Manifest(format!("cannot express {} relative to {}", target.display(), base.display())))?;
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    Ok(parts.join("/"))
}

/// Creates `dir` if needed and insists that it is empty.
fn prepare_out_dir(dir: &Path) -> Result<PathBuf> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::OutDirNotEmpty(dir.to_path_buf()));
        }
    } else {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dir.canonicalize().map_err(|e| Error::io(dir, e))
}

/// File name for a scenario id; characters outside `[A-Za-z0-9._-]` become `_`.
pub fn scenario_file_name(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{stem}.{SIF_EXTENSION}")
}

impl Database {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let dir = dir.canonicalize().map_err(|e| Error::io(dir, e))?;
        let summary: BTreeMap<String, ScenarioMetadata> = read_json(&dir.join(SUMMARY_FILE))?;
        let mapping: BTreeMap<String, String> = read_json(&dir.join(MAPPING_FILE))?;
        if !summary.keys().eq(mapping.keys()) {
            let s: BTreeSet<_> = summary.keys().collect();
            let m: BTreeSet<_> = mapping.keys().collect();
            let diff: Vec<_> = s.symmetric_difference(&m).take(5).collect();
            return Err(Error::Manifest(format!("summary and mapping ids differ, e.g. {diff:?}")));
        }
        Ok(Self { dir, summary, mapping })
    }

    /// Writes manifests for `entries` (id, metadata, absolute scenario path) into an empty `out_dir`.
    fn create(out_dir: &Path, entries: Vec<(String, ScenarioMetadata, PathBuf)>) -> Result<Self> {
        let dir = prepare_out_dir(out_dir)?;
        let mut summary = BTreeMap::new();
        let mut mapping = BTreeMap::new();
        for (id, meta, path) in entries {
            if summary.contains_key(&id) {
                return Err(Error::DuplicateScenario(id));
            }
            mapping.insert(id.clone(), relative_path(&path, &dir)?);
            summary.insert(id, meta);
        }
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        write_json(&dir.join(MAPPING_FILE), &mapping)?;
        Ok(Self { dir, summary, mapping })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.summary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summary.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.summary.keys().map(String::as_str)
    }

    pub fn summary(&self) -> &BTreeMap<String, ScenarioMetadata> {
        &self.summary
    }

    pub fn mapping(&self) -> &BTreeMap<String, String> {
        &self.mapping
    }

    pub fn metadata(&self, id: &str) -> Result<&ScenarioMetadata> {
        self.summary.get(id).ok_or_else(|| Error::UnknownObject(id.to_string()))
    }

    /// Absolute, normalized path of a scenario file.
    pub fn path_of(&self, id: &str) -> Result<PathBuf> {
        let rel = self.mapping.get(id).ok_or_else(|| Error::UnknownObject(id.to_string()))?;
        Ok(lexical_normalize(&self.dir.join(rel)))
    }

    pub fn read(&self, id: &str) -> Result<ScenarioDescription> {
        read_scenario(self.path_of(id)?)
    }

    /// Ids whose mapped file does not exist.
    pub fn missing_files(&self) -> Vec<String> {
        self.ids()
            .filter(|id| !self.path_of(id).map_or(false, |p| p.is_file()))
            .map(str::to_string)
            .collect()
    }

    fn entries_for<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> Result<Vec<(String, ScenarioMetadata, PathBuf)>> {
        ids.into_iter()
            .map(|id| Ok((id.to_string(), self.metadata(id)?.clone(), self.path_of(id)?)))
            .collect()
    }
}

/// One input that could not be converted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub index: usize,
    pub input: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub database: Database,
    pub failures: Vec<BuildFailure>,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Converts every input with `converter` and writes one scenario file per
/// success plus the manifests. Failed inputs are listed in `failures.jsonl`.
/// Output bytes do not depend on `workers`.
pub fn build_database<I, F>(converter: F, inputs: &[I], out_dir: impl AsRef<Path>, workers: usize) -> Result<BuildOutcome>
where
    I: Sync + fmt::Debug,
    F: Fn(&I) -> Result<ScenarioDescription> + Sync,
{
    let out_dir = out_dir.as_ref();
    let dir = prepare_out_dir(out_dir)?;
    let pool = worker_pool(workers)?;
    let converted: Vec<Result<(ScenarioDescription, Vec<u8>)>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|item| {
                let desc = converter(item)?;
                let report = validate_scenario(&desc);
                if !report.passed() {
                    return Err(Error::Invalid(report));
                }
                let bytes = encode_scenario(&desc)?;
                Ok((desc, bytes))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut accepted = Vec::new();
    let mut names = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for (index, (item, result)) in inputs.iter().zip(converted).enumerate() {
        let fail = |error: String| BuildFailure {
            index,
            input: format!("{item:?}"),
            error,
        };
        match result {
            Ok((desc, bytes)) => {
                let name = scenario_file_name(&desc.scenario_id);
                if ids.contains(&desc.scenario_id) || names.contains(&name) {
                    failures.push(fail(Error::DuplicateScenario(desc.scenario_id.clone()).to_string()));
                    continue;
                }
                ids.insert(desc.scenario_id.clone());
                names.insert(name.clone());
                accepted.push((desc, bytes, name));
            }
            Err(e) => failures.push(fail(e.to_string())),
        }
    }

    if !failures.is_empty() {
        let mut text = String::new();
        for f in &failures {
            text.push_str(&serde_json::to_string(f).expect("failure record serializes"));
            text.push('\n');
        }
        let path = dir.join(FAILURES_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if accepted.is_empty() {
        return Err(Error::NoSuccessfulConversions);
    }

    pool.install(|| {
        accepted.par_iter().try_for_each(|(_, bytes, name)| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        })
    })?;

    let mut summary = BTreeMap::new();
    let mut mapping = BTreeMap::new();
    for (desc, _, name) in accepted {
        mapping.insert(desc.scenario_id.clone(), name);
        summary.insert(desc.scenario_id, desc.metadata);
    }
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_json(&dir.join(MAPPING_FILE), &mapping)?;
    Ok(BuildOutcome {
        database: Database { dir, summary, mapping },
        failures,
    })
}

pub fn merge(dbs: &[&Database], out_dir: impl AsRef<Path>) -> Result<Database> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for db in dbs {
        for id in db.ids() {
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicateScenario(id.to_string()));
            }
        }
        entries.extend(db.entries_for(db.ids())?);
    }
    Database::create(out_dir.as_ref(), entries)
}

pub fn filter(db: &Database, pred: &FilterPredicate, out_dir: impl AsRef<Path>) -> Result<Database> {
    let ids: Vec<&str> = db.summary.iter().filter(|(_, m)| pred.matches(m)).map(|(id, _)| id.as_str()).collect();
    Database::create(out_dir.as_ref(), db.entries_for(ids)?)
}

fn shuffled_ids(db: &Database, seed: u64) -> Vec<&str> {
    let mut ids: Vec<&str> = db.ids().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Train and test sizes: the test share is rounded, the remainder goes to train.
pub fn split_sizes(total: usize, train: f64, test: f64) -> Result<(usize, usize)> {
    if !(train >= 0.0 && test >= 0.0) || ((train + test) - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions { train, test });
    }
    let n_test = ((test * total as f64).round() as usize).min(total);
    Ok((total - n_test, n_test))
}

/// Disjoint, exhaustive random partition into train and test databases.
pub fn split(
    db: &Database,
    train: f64,
    test: f64,
    seed: u64,
    train_dir: impl AsRef<Path>,
    test_dir: impl AsRef<Path>,
) -> Result<(Database, Database)> {
    let (n_train, _) = split_sizes(db.len(), train, test)?;
    let ids = shuffled_ids(db, seed);
    let a = Database::create(train_dir.as_ref(), db.entries_for(ids[..n_train].iter().copied())?)?;
    let b = Database::create(test_dir.as_ref(), db.entries_for(ids[n_train..].iter().copied())?)?;
    Ok((a, b))
}

/// `n` scenarios drawn uniformly without replacement.
pub fn sample(db: &Database, n: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<Database> {
    if n > db.len() {
        return Err(Error::SampleTooLarge { n, total: db.len() });
    }
    let ids = shuffled_ids(db, seed);
    Database::create(out_dir.as_ref(), db.entries_for(ids[..n].iter().copied())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityFailure {
    pub scenario_id: String,
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub checked: usize,
    pub failures: Vec<SanityFailure>,
}

impl SanityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Why a scenario file is unusable, or `None` if it parses, validates and loads.
pub fn check_scenario_file(path: &Path) -> Option<String> {
    let desc = match read_scenario(path) {
        Ok(d) => d,
        Err(e) => return Some(format!("unreadable: {e}")),
    };
    let report = validate_scenario(&desc);
    if !report.passed() {
        return Some(format!("invalid: {report}"));
    }
    match World::new(Arc::new(desc), SimConfig::default()) {
        Ok(_) => None,
        Err(e) => Some(format!("simulator rejected scenario: {e}")),
    }
}

/// Keeps exactly the scenarios that parse, validate and load into the simulator.
pub fn sanity_check(db: &Database, out_dir: impl AsRef<Path>, workers: usize) -> Result<(Database, SanityReport)> {
    let pool = worker_pool(workers)?;
    let ids: Vec<&str> = db.ids().collect();
    let verdicts: Vec<Option<String>> = pool.install(|| {
        ids.par_iter()
            .map(|id| match db.path_of(id) {
                Ok(p) => check_scenario_file(&p),
                Err(e) => Some(e.to_string()),
            })
            .collect()
    });
    let mut report = SanityReport {
        checked: ids.len(),
        failures: Vec::new(),
    };
    let mut keep = Vec::new();
    for (id, verdict) in ids.into_iter().zip(verdicts) {
        match verdict {
            None => keep.push(id),
            Some(reason) => report.failures.push(SanityFailure {
                scenario_id: id.to_string(),
                path: db.mapping[id].clone(),
                reason,
            }),
        }
    }
    let out = Database::create(out_dir.as_ref(), db.entries_for(keep)?)?;
    Ok((out, report))
}

/// Closed-loop rollouts of every scenario without external actions. Returns
/// the episode rows in id order and the scenarios that failed to run.
pub fn rollout_database(db: &Database, config: &SimConfig, workers: usize) -> Result<(Vec<EpisodeRecord>, Vec<SanityFailure>)> {
    let pool = worker_pool(workers)?;
    let ids: Vec<&str> = db.ids().collect();
    let runs: Vec<Result<Vec<EpisodeRecord>>> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let mut world = World::new(Arc::new(db.read(id)?), config.clone())?;
                world.run_to_end()?;
                Ok(world.episode_records())
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, run) in ids.into_iter().zip(runs) {
        match run {
            Ok(r) => records.extend(r),
            Err(e) => failures.push(SanityFailure {
                scenario_id: id.to_string(),
                path: db.mapping[id].clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok((records, failures))
}

pub fn stats(db: &Database) -> Result<StatsTable> {
    compute_stats(db.summary.values())
}
