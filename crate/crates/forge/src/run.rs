//! Search run directories.
//!
//! A run directory holds `config.json` (everything needed to rerun),
//! `log.jsonl` (one record per child), `timing.jsonl` (wall time per child,
//! kept apart so the log stays byte-identical across reruns),
//! `population.ckpt` (resumable state) and `best.prog`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use optimforge_core::evolution::{ChildRecord, Counters, Individual, Observer, Search, SearchConfig, SearchError, SearchState};
use optimforge_core::task::ProxyTask;
use optimforge_core::{HashValue, Program};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::Pool;

pub const CONFIG: &str = "config.json";
pub const LOG: &str = "log.jsonl";
pub const TIMING: &str = "timing.jsonl";
pub const CHECKPOINT: &str = "population.ckpt";
pub const BEST: &str = "best.prog";
pub const SUMMARY: &str = "summary.json";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    User(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl From<SearchError> for RunError {
    fn from(e: SearchError) -> Self {
        RunError::User(e.to_string())
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub format_version: u32,
    pub task: ProxyTask,
    pub search: SearchConfig,
    pub initial: Program,
    /// Children between checkpoints.
    pub checkpoint_every: usize,
}

impl SearchRun {
    pub fn new(task: ProxyTask, search: SearchConfig, initial: Program) -> Self {
        Self { format_version: FORMAT_VERSION, task, search, initial, checkpoint_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub children: u64,
    pub finished: bool,
    pub best_hash: HashValue,
    pub best_fitness: optimforge_core::Fitness,
    pub counters: Counters,
    pub cache_hit_rate: f64,
    pub raw_cache_hit_rate: f64,
    pub redundant_fraction: f64,
}

impl Summary {
    fn of(state: &SearchState, cfg: &SearchConfig) -> Self {
        Self {
            children: state.counters.children,
            finished: state.finished(cfg),
            best_hash: state.best.hash,
            best_fitness: state.best.fitness,
            counters: state.counters.clone(),
            cache_hit_rate: state.counters.cache_hit_rate(),
            raw_cache_hit_rate: state.counters.raw_cache_hit_rate(),
            redundant_fraction: state.counters.redundant_fraction(),
        }
    }
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let target = self.file(name);
        let tmp = self.file(&format!("{name}.tmp"));
        fs::write(&tmp, bytes).map_err(io(&tmp))?;
        fs::rename(&tmp, &target).map_err(io(&target))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, RunError> {
        let path = self.file(name);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Corrupt { path, message: e.to_string() })
    }

    pub fn read_config(&self) -> Result<SearchRun, RunError> {
        let run: SearchRun = self.read_json(CONFIG)?;
        if run.format_version != FORMAT_VERSION {
            return Err(RunError::User(format!("unsupported run format version {}", run.format_version)));
        }
        Ok(run)
    }

    pub fn read_checkpoint(&self) -> Result<SearchState, RunError> {
        self.read_json(CHECKPOINT)
    }

    pub fn read_summary(&self) -> Result<Summary, RunError> {
        self.read_json(SUMMARY)
    }

    fn save(&self, state: &SearchState, cfg: &SearchConfig) -> Result<(), RunError> {
        let ckpt = serde_json::to_vec(state).expect("state serializes");
        self.write_atomic(CHECKPOINT, &ckpt)?;
        self.write_atomic(BEST, state.best.program.print().as_bytes())?;
        let summary = serde_json::to_vec_pretty(&Summary::of(state, cfg)).expect("summary serializes");
        self.write_atomic(SUMMARY, &summary)
    }

    /// Opens a JSONL file for appending after its first `keep` lines.
    fn open_truncated(&self, name: &str, keep: u64) -> Result<BufWriter<File>, RunError> {
        let path = self.file(name);
        let mut lines = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(io(&path))?;
            for line in BufReader::new(f).lines().take(keep as usize) {
                lines.push(line.map_err(io(&path))?);
            }
            if (lines.len() as u64) < keep {
                return Err(RunError::Corrupt { path, message: format!("has {} records, checkpoint expects {keep}", lines.len()) });
            }
        } else if keep > 0 {
            return Err(RunError::Corrupt { path, message: "missing".into() });
        }
        let mut out = BufWriter::new(File::create(&path).map_err(io(&path))?);
        for l in lines {
            writeln!(out, "{l}").map_err(io(&path))?;
        }
        Ok(out)
    }
}

/// Starts a search in an empty or missing directory.
pub fn start(dir: &RunDir, run: &SearchRun, pool: &Pool, stop_after: Option<u64>) -> Result<Summary, RunError> {
    if dir.file(LOG).exists() || dir.file(CHECKPOINT).exists() {
        return Err(RunError::User(format!("{} already holds a run; resume it or pick another directory", dir.path.display())));
    }
    fs::create_dir_all(&dir.path).map_err(io(&dir.path))?;
    let config = serde_json::to_vec_pretty(run).expect("config serializes");
    dir.write_atomic(CONFIG, &config)?;
    let task = run.task.prepare();
    let search = Search::new(&run.search, &task, pool)?;
    let state = search.init(&run.initial)?;
    drive(dir, run, &search, state, stop_after)
}

/// Continues the search saved in `dir` from its last checkpoint.
pub fn resume(dir: &RunDir, pool: &Pool, stop_after: Option<u64>) -> Result<Summary, RunError> {
    let run = dir.read_config()?;
    let state = dir.read_checkpoint()?;
    let task = run.task.prepare();
    let search = Search::new(&run.search, &task, pool)?;
    search.check_resume(&state)?;
    drive(dir, &run, &search, state, stop_after)
}

struct Writer {
    log: BufWriter<File>,
    timing: BufWriter<File>,
    last: Instant,
    error: Option<std::io::Error>,
}

impl Observer for Writer {
    fn on_child(&mut self, r: &ChildRecord, _: &Individual) {
        let now = Instant::now();
        let wall_ms = now.duration_since(self.last).as_secs_f64() * 1e3;
        self.last = now;
        let line = serde_json::to_string(r).expect("records serialize");
        let result = writeln!(self.log, "{line}")
            .and_then(|_| writeln!(self.timing, "{{\"cycle\":{},\"wall_ms\":{wall_ms:.3}}}", r.cycle));
        if let Err(e) = result {
            self.error.get_or_insert(e);
        }
    }
}

impl Writer {
    fn flush(&mut self) -> std::io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.log.flush()?;
        self.timing.flush()
    }
}

fn drive(dir: &RunDir, run: &SearchRun, search: &Search, mut state: SearchState, stop_after: Option<u64>) -> Result<Summary, RunError> {
    let done = state.counters.children;
    let mut writer = Writer {
        log: dir.open_truncated(LOG, done)?,
        timing: dir.open_truncated(TIMING, done)?,
        last: Instant::now(),
        error: None,
    };
    let log_path = dir.file(LOG);
    if state.counters.children == 0 {
        dir.save(&state, &run.search)?;
    }
    let every = run.checkpoint_every.max(1) as u64;
    while !state.finished(&run.search) {
        let before = state.counters.children;
        search.step(&mut state, &mut writer);
        let now = state.counters.children;
        let stopping = stop_after.is_some_and(|n| now >= n);
        if now / every != before / every || stopping || state.finished(&run.search) {
            // The log must be on disk before the checkpoint that counts it.
            writer.flush().map_err(io(&log_path))?;
            dir.save(&state, &run.search)?;
        }
        if stopping {
            break;
        }
    }
    writer.flush().map_err(io(&log_path))?;
    dir.save(&state, &run.search)?;
    Ok(Summary::of(&state, &run.search))
}

/// Distinct programs from the final population and the best, fittest
/// first, failed runs dropped.
pub fn top_programs(state: &SearchState, k: usize) -> Vec<Individual> {
    let mut seen = std::collections::BTreeSet::new();
    let mut all: Vec<Individual> = std::iter::once(&state.best)
        .chain(state.population.iter())
        .filter(|i| i.fitness.is_ok() && seen.insert(i.hash))
        .cloned()
        .collect();
    all.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.hash.cmp(&b.hash)));
    all.truncate(k);
    all
}
