//! Thread pool evaluation and wall-clock deadlines.

use std::time::{Duration, Instant};

use optimforge_core::task::{BatchEvaluator, Deadline, EvalJob, Fitness};
use rayon::prelude::*;

pub const THREADS_ENV: &str = "OPTIMFORGE_THREADS";

pub struct WallClock {
    end: Option<Instant>,
}

impl WallClock {
    /// Expires `secs` seconds from now; never when `secs` is not positive and finite.
    pub fn after(secs: f64) -> Self {
        let end = (secs.is_finite() && secs > 0.0).then(|| Instant::now() + Duration::from_secs_f64(secs));
        Self { end }
    }
}

impl Deadline for WallClock {
    fn expired(&self) -> bool {
        self.end.is_some_and(|e| Instant::now() >= e)
    }
}

/// Thread count from the flag, else the environment, else the machine.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, String> {
    if let Some(n) = flag {
        return if n == 0 { Err("--threads must be positive".into()) } else { Ok(n) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("{THREADS_ENV}={s:?} is not a positive integer")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Evaluates jobs on a private rayon pool. Each job gets its task's timeout.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

fn run(job: &EvalJob<'_>) -> Fitness {
    let deadline = WallClock::after(job.task.task.timeout_secs);
    job.task
        .evaluate(job.program, job.seed, &deadline)
        .unwrap_or_else(|_| Fitness::nonfinite())
}

impl BatchEvaluator for Pool {
    fn evaluate(&self, jobs: &[EvalJob<'_>]) -> Vec<Fitness> {
        if jobs.len() <= 1 || self.threads() == 1 {
            return jobs.iter().map(run).collect();
        }
        self.pool.install(|| jobs.par_iter().map(run).collect())
    }
}
