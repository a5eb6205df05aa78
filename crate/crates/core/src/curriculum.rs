//! Difficulty-sorted curriculum with per-worker levels and a success-rate gate.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub n_levels: usize,
    pub n_subsets: usize,
    /// Success rate needed to leave a level.
    pub threshold: f64,
    /// Number of most recent episodes the success rate is taken over.
    pub window: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            n_levels: 100,
            n_subsets: 20,
            threshold: 0.75,
            window: 40,
        }
    }
}

/// What the scheduler needs to know about one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumEntry {
    pub scenario_id: String,
    pub difficulty: f64,
    pub track_length: f64,
}

#[derive(Debug, Clone, Default)]
struct WorkerState {
    /// Zero-based.
    level: usize,
    window: VecDeque<bool>,
    episodes_at_level: usize,
}

/// Curriculum levels and per-worker progress.
///
/// Worker `w` always draws from subset `w % n_subsets` of its current level.
/// Each worker sits behind its own lock, so reports from different workers
/// never contend.
#[derive(Debug)]
pub struct Curriculum {
    config: CurriculumConfig,
    order: Vec<CurriculumEntry>,
    levels: Vec<Range<usize>>,
    workers: Vec<Mutex<WorkerState>>,
}

/// Sorts by difficulty and partitions contiguously into at most `n_levels`
/// levels whose sizes differ by at most one.
pub fn build_curriculum(mut entries: Vec<CurriculumEntry>, config: CurriculumConfig, n_workers: usize) -> Result<Curriculum> {
    if entries.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if config.n_levels == 0 || config.n_subsets == 0 || config.window == 0 || n_workers == 0 {
        return Err(Error::Config(
            "curriculum needs at least one level, subset, window slot and worker".into(),
        ));
    }
    entries.sort_by(|a, b| {
        a.difficulty
            .total_cmp(&b.difficulty)
            .then(a.track_length.total_cmp(&b.track_length))
            .then_with(|| a.scenario_id.cmp(&b.scenario_id))
    });
    let total = entries.len();
    let n_levels = config.n_levels.min(total);
    let levels = (0..n_levels)
        .map(|k| k * total / n_levels..(k + 1) * total / n_levels)
        .collect();
    Ok(Curriculum {
        config,
        order: entries,
        levels,
        workers: (0..n_workers).map(|_| Mutex::new(WorkerState::default())).collect(),
    })
}

impl Curriculum {
    pub fn config(&self) -> &CurriculumConfig {
        &self.config
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    /// Scenarios in difficulty order.
    pub fn order(&self) -> &[CurriculumEntry] {
        &self.order
    }

    /// Entries of a one-based level.
    pub fn level(&self, level: usize) -> &[CurriculumEntry] {
        &self.order[self.levels[level - 1].clone()]
    }

    /// Subset `subset` of a one-based level: every `n_subsets`-th entry.
    pub fn subset(&self, level: usize, subset: usize) -> Vec<&CurriculumEntry> {
        self.level(level)
            .iter()
            .skip(subset)
            .step_by(self.config.n_subsets)
            .collect()
    }

    fn worker(&self, worker: usize) -> Result<std::sync::MutexGuard<'_, WorkerState>> {
        let w = self.workers.get(worker).ok_or(Error::UnknownWorker(worker))?;
        Ok(w.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// One-based level of a worker.
    pub fn worker_level(&self, worker: usize) -> Result<usize> {
        Ok(self.worker(worker)?.level + 1)
    }

    /// Scenario ids the worker has to keep loaded.
    pub fn resident(&self, worker: usize) -> Result<Vec<String>> {
        let level = self.worker_level(worker)?;
        Ok(self
            .subset(level, worker % self.config.n_subsets)
            .into_iter()
            .map(|e| e.scenario_id.clone())
            .collect())
    }

    /// Success rate over the worker's current window, `None` before any episode.
    pub fn success_rate(&self, worker: usize) -> Result<Option<f64>> {
        let w = self.worker(worker)?;
        Ok((!w.window.is_empty()).then(|| w.window.iter().filter(|&&s| s).count() as f64 / w.window.len() as f64))
    }

    /// Records one episode outcome. Returns the new one-based level when the worker advanced.
    pub fn report_result(&self, worker: usize, success: bool) -> Result<Option<usize>> {
        let mut w = self.worker(worker)?;
        w.window.push_back(success);
        if w.window.len() > self.config.window {
            w.window.pop_front();
        }
        w.episodes_at_level += 1;
        let full = w.window.len() == self.config.window;
        let successes = w.window.iter().filter(|&&s| s).count();
        let rate = successes as f64 / w.window.len() as f64;
        if full && rate >= self.config.threshold && w.level + 1 < self.levels.len() {
            w.level += 1;
            w.window.clear();
            w.episodes_at_level = 0;
            return Ok(Some(w.level + 1));
        }
        Ok(None)
    }
}
