//! Regularized evolution over programs.
//!
//! Each cycle draws a tournament from the population, mutates the winner
//! until the child type-checks, looks its functional hash up in the fitness
//! cache (evaluating only on a miss), appends the child and evicts the oldest
//! member. Every child draws its randomness from its own stream, keyed by the
//! run seed and the child index, so a search can stop and resume anywhere
//! and its results do not depend on how evaluations are scheduled.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, Analysis, HashValue, Signature};
use crate::program::{mutate, random_program, MutationConfig, Program};
use crate::rng::{derive, seeded};
use crate::task::{eval_seed, BatchEvaluator, EvalJob, Fitness, PreparedTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestartPolicy {
    None,
    /// `runs` independent searches from the initial program, each with the full budget.
    FromInitial { runs: usize },
    /// Re-seed the whole population with the best program every `children` children.
    FromBestAfter { children: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Tournament selection plus mutation.
    Evolution,
    /// Independent random programs with lengths uniform in `1..=max_len`.
    Random { max_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population: usize,
    pub tournament: usize,
    /// Children per run.
    pub budget: usize,
    pub seed: u64,
    pub restart: RestartPolicy,
    pub mutation: MutationConfig,
    pub strategy: Strategy,
    /// Evaluations averaged per new hash.
    pub repeats: usize,
    /// Children generated from one population snapshot; their evaluations
    /// may run in parallel. Changes results, unlike the thread count.
    pub batch: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 1000,
            tournament: 2,
            budget: 1000,
            seed: 0,
            restart: RestartPolicy::None,
            mutation: MutationConfig::default(),
            strategy: Strategy::Evolution,
            repeats: 1,
            batch: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("initial program does not fit the task: {0}")]
    InvalidSeed(String),
    #[error("checkpoint does not match the config: {0}")]
    Checkpoint(String),
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if !(2 <= self.tournament && self.tournament < self.population) {
            return bad(format!(
                "need 2 <= tournament < population, got tournament {} and population {}",
                self.tournament, self.population
            ));
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if self.repeats == 0 || self.batch == 0 {
            return bad("repeats and batch must be positive".into());
        }
        match self.restart {
            RestartPolicy::FromInitial { runs: 0 } | RestartPolicy::FromBestAfter { children: 0 } => {
                return bad("restart parameters must be positive".into())
            }
            _ => {}
        }
        if let Strategy::Random { max_len: 0 } = self.strategy {
            return bad("random search needs max_len >= 1".into());
        }
        self.mutation.validate().map_err(SearchError::Config)
    }

    pub fn runs(&self) -> usize {
        match self.restart {
            RestartPolicy::FromInitial { runs } => runs,
            _ => 1,
        }
    }

    /// Children generated over the whole search.
    pub fn total_children(&self) -> usize {
        self.budget * self.runs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub program: Program,
    pub hash: HashValue,
    pub fitness: Fitness,
    /// Insertion sequence number; larger is younger.
    pub birth: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub children: u64,
    pub evaluations: u64,
    pub cache_hits: u64,
    /// Hits had the cache been keyed by the hash without commutative sorting.
    pub raw_cache_hits: u64,
    pub retry_exhaustions: u64,
    pub statements: u64,
    pub live_statements: u64,
}

impl Counters {
    pub fn cache_hit_rate(&self) -> f64 {
        ratio(self.cache_hits, self.children)
    }

    pub fn raw_cache_hit_rate(&self) -> f64 {
        ratio(self.raw_cache_hits, self.children)
    }

    /// Fraction of generated statements no output depends on.
    pub fn redundant_fraction(&self) -> f64 {
        ratio(self.statements - self.live_statements, self.statements)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub population: VecDeque<Individual>,
    pub cache: BTreeMap<HashValue, Fitness>,
    pub raw_seen: BTreeSet<HashValue>,
    pub best: Individual,
    pub counters: Counters,
    /// Current independent run (restart from initial).
    pub run: usize,
    /// Children generated in the current run.
    pub run_children: usize,
    pub next_birth: u64,
    pub initial: Individual,
}

impl SearchState {
    pub fn finished(&self, cfg: &SearchConfig) -> bool {
        self.counters.children as usize >= cfg.total_children()
    }
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub cycle: u64,
    pub run: usize,
    pub parent_hash: Option<HashValue>,
    pub child_hash: HashValue,
    pub cache_hit: bool,
    pub raw_cache_hit: bool,
    pub fitness: f64,
    pub status: crate::task::FitnessStatus,
    pub statements: usize,
    pub live_statements: usize,
    pub retries: usize,
}

pub trait Observer {
    fn on_child(&mut self, record: &ChildRecord, child: &Individual);
}

impl Observer for () {
    fn on_child(&mut self, _: &ChildRecord, _: &Individual) {}
}

impl<F: FnMut(&ChildRecord, &Individual)> Observer for F {
    fn on_child(&mut self, record: &ChildRecord, child: &Individual) {
        self(record, child)
    }
}

/// A search bound to a task and an evaluator.
pub struct Search<'a> {
    pub cfg: &'a SearchConfig,
    pub task: &'a PreparedTask,
    pub evaluator: &'a dyn BatchEvaluator,
    signature: Signature,
}

struct Candidate {
    program: Program,
    analysis: Analysis,
    parent: Option<HashValue>,
    retries: usize,
}

impl<'a> Search<'a> {
    pub fn new(cfg: &'a SearchConfig, task: &'a PreparedTask, evaluator: &'a dyn BatchEvaluator) -> Result<Self, SearchError> {
        cfg.validate()?;
        Ok(Self { cfg, task, evaluator, signature: task.signature() })
    }

    fn fitness_of(&self, jobs: &[(Program, HashValue)]) -> Vec<Fitness> {
        let repeats = self.cfg.repeats;
        let mut eval_jobs = Vec::with_capacity(jobs.len() * repeats);
        for (p, h) in jobs {
            let base = eval_seed(self.cfg.seed, *h, &self.task.task);
            for r in 0..repeats {
                let seed = if r == 0 { base } else { derive(&[base, r as u64]) };
                eval_jobs.push(EvalJob { program: p, task: self.task, seed });
            }
        }
        let results = self.evaluator.evaluate(&eval_jobs);
        results
            .chunks(repeats)
            .map(|c| match c.iter().find(|f| !f.is_ok()) {
                Some(bad) => *bad,
                None => Fitness::ok(c.iter().map(|f| f.value).sum::<f64>() / repeats as f64),
            })
            .collect()
    }

    /// Population of `P` copies of `seed_program`, evaluated once.
    pub fn init(&self, seed_program: &Program) -> Result<SearchState, SearchError> {
        let analysis = analyze(seed_program, &self.signature).map_err(|e| SearchError::InvalidSeed(format!("{e}")))?;
        let fitness = self.fitness_of(&[(seed_program.clone(), analysis.hash)])[0];
        let initial = Individual { program: seed_program.clone(), hash: analysis.hash, fitness, birth: 0 };
        let mut cache = BTreeMap::new();
        cache.insert(analysis.hash, fitness);
        let mut raw_seen = BTreeSet::new();
        raw_seen.insert(analysis.raw_hash);
        let mut state = SearchState {
            population: VecDeque::new(),
            cache,
            raw_seen,
            best: initial.clone(),
            counters: Counters { evaluations: 1, ..Counters::default() },
            run: 0,
            run_children: 0,
            next_birth: 0,
            initial,
        };
        let founder = state.initial.clone();
        self.refill(&mut state, &founder);
        Ok(state)
    }

    fn refill(&self, state: &mut SearchState, founder: &Individual) {
        state.population.clear();
        for _ in 0..self.cfg.population {
            let mut ind = founder.clone();
            ind.birth = state.next_birth;
            state.next_birth += 1;
            state.population.push_back(ind);
        }
    }

    /// Checks that a resumed state belongs to this config.
    pub fn check_resume(&self, state: &SearchState) -> Result<(), SearchError> {
        if state.population.len() != self.cfg.population {
            return Err(SearchError::Checkpoint(format!(
                "population {} vs configured {}",
                state.population.len(),
                self.cfg.population
            )));
        }
        Ok(())
    }

    fn tournament<R: Rng>(&self, state: &SearchState, rng: &mut R) -> usize {
        let picks = index::sample(rng, state.population.len(), self.cfg.tournament);
        let mut best = picks.index(0);
        for i in picks.iter().skip(1) {
            let (a, b) = (&state.population[i], &state.population[best]);
            let ord = a.fitness.total_cmp(&b.fitness).then(a.birth.cmp(&b.birth));
            if ord == core::cmp::Ordering::Greater {
                best = i;
            }
        }
        best
    }

    fn make_child(&self, state: &SearchState, child_index: u64, exhaustions: &mut u64) -> Candidate {
        let mut rng = seeded(derive(&[self.cfg.seed, state.run as u64]), child_index);
        let r = self.cfg.mutation.max_retries;
        loop {
            match self.cfg.strategy {
                Strategy::Random { max_len } => {
                    for retries in 0..r {
                        let len = rng.random_range(1..=max_len);
                        let p = random_program(len, &self.cfg.mutation, &mut rng);
                        if let Ok(analysis) = analyze(&p, &self.signature) {
                            return Candidate { program: p, analysis, parent: None, retries };
                        }
                    }
                }
                Strategy::Evolution => {
                    let parent = &state.population[self.tournament(state, &mut rng)];
                    for retries in 0..r {
                        let Some(p) = mutate(&parent.program, &self.cfg.mutation, &mut rng) else { continue };
                        if let Ok(analysis) = analyze(&p, &self.signature) {
                            return Candidate { program: p, analysis, parent: Some(parent.hash), retries };
                        }
                    }
                }
            }
            *exhaustions += 1;
        }
    }

    /// Generates, evaluates and inserts one batch of children.
    pub fn step(&self, state: &mut SearchState, observer: &mut dyn Observer) {
        let remaining = self.cfg.budget - state.run_children;
        let n = self.cfg.batch.min(remaining);
        let mut exhaustions = 0;
        let candidates: Vec<Candidate> = (0..n)
            .map(|i| self.make_child(state, state.counters.children + i as u64, &mut exhaustions))
            .collect();
        state.counters.retry_exhaustions += exhaustions;

        let mut pending: Vec<(Program, HashValue)> = Vec::new();
        for c in &candidates {
            let h = c.analysis.hash;
            if !state.cache.contains_key(&h) && !pending.iter().any(|(_, x)| *x == h) {
                pending.push((c.program.clone(), h));
            }
        }
        let results = self.fitness_of(&pending);
        let fresh: BTreeMap<HashValue, Fitness> = pending.iter().map(|(_, h)| *h).zip(results).collect();

        for c in candidates {
            let h = c.analysis.hash;
            let cycle = state.counters.children;
            let (fitness, cache_hit) = match state.cache.get(&h) {
                Some(f) => (*f, true),
                None => {
                    let f = fresh[&h];
                    state.cache.insert(h, f);
                    state.counters.evaluations += 1;
                    (f, false)
                }
            };
            let raw_cache_hit = !state.raw_seen.insert(c.analysis.raw_hash);
            let child = Individual { program: c.program, hash: h, fitness, birth: state.next_birth };
            state.next_birth += 1;
            let live = c.analysis.live.len();
            let record = ChildRecord {
                cycle,
                run: state.run,
                parent_hash: c.parent,
                child_hash: h,
                cache_hit,
                raw_cache_hit,
                fitness: fitness.value,
                status: fitness.status,
                statements: child.program.len(),
                live_statements: live,
                retries: c.retries,
            };
            let counters = &mut state.counters;
            counters.children += 1;
            counters.cache_hits += cache_hit as u64;
            counters.raw_cache_hits += raw_cache_hit as u64;
            counters.statements += child.program.len() as u64;
            counters.live_statements += live as u64;
            if fitness.total_cmp(&state.best.fitness).is_gt() {
                state.best = child.clone();
            }
            observer.on_child(&record, &child);
            state.population.push_back(child);
            state.population.pop_front();
            state.run_children += 1;
            self.after_child(state);
        }
    }

    fn after_child(&self, state: &mut SearchState) {
        match self.cfg.restart {
            RestartPolicy::None => {}
            RestartPolicy::FromBestAfter { children } => {
                if state.run_children % children == 0 && state.run_children < self.cfg.budget {
                    let best = state.best.clone();
                    self.refill(state, &best);
                }
            }
            RestartPolicy::FromInitial { runs } => {
                if state.run_children == self.cfg.budget && state.run + 1 < runs {
                    state.run += 1;
                    state.run_children = 0;
                    let initial = state.initial.clone();
                    self.refill(state, &initial);
                }
            }
        }
    }

    /// Steps until the budget is spent or `stop` returns true after a step.
    pub fn run(&self, state: &mut SearchState, observer: &mut dyn Observer, mut stop: impl FnMut(&SearchState) -> bool) {
        while !state.finished(self.cfg) {
            self.step(state, observer);
            if stop(state) {
                break;
            }
        }
    }
}

/// Runs a whole search from `seed_program` and returns the final state.
pub fn run_search(
    cfg: &SearchConfig,
    task: &PreparedTask,
    seed_program: &Program,
    evaluator: &dyn BatchEvaluator,
    observer: &mut dyn Observer,
) -> Result<SearchState, SearchError> {
    let search = Search::new(cfg, task, evaluator)?;
    let mut state = search.init(seed_program)?;
    search.run(&mut state, observer, |_| false);
    Ok(state)
}
