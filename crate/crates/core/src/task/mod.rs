//! Proxy tasks: seeded training runs that turn a program into a fitness.

mod data;
mod model;
mod schedule;

pub use data::{Batch, Dataset, DatasetSpec, Targets};
pub use model::{Activation, ModelSpec};
pub use schedule::{schedule, Decay, ScheduleSpec};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{infer, HashValue, Signature, TypeError};
use crate::optim::{ProgramRule, UpdateRule};
use crate::program::Program;
use crate::rng::{derive, seeded};
use crate::value::TensorValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ValAccuracy,
    NegValLoss,
}

/// A fully specified training problem. Equal specs define equal fitness functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTask {
    pub id: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: ScheduleSpec,
    pub metric: Metric,
    /// Wall-clock budget per evaluation, enforced by the caller's deadline.
    pub timeout_secs: f64,
    /// Search population size suggested for this task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
}

impl ProxyTask {
    /// Convex least squares: 100 dims, 2000 steps, batch 64.
    pub fn linreg() -> Self {
        Self {
            id: "linreg".into(),
            dataset: DatasetSpec::Linreg { dim: 100, train: 1000, val: 1000, noise: 0.1, seed: 1 },
            model: ModelSpec::Linear,
            steps: 2000,
            batch_size: 64,
            schedule: ScheduleSpec::default(),
            metric: Metric::NegValLoss,
            timeout_secs: 60.0,
            population: Some(100),
        }
    }

    /// 2-32-32-4 tanh classifier on overlapping Gaussian blobs.
    pub fn mlp_blobs() -> Self {
        Self {
            id: "mlp-blobs".into(),
            dataset: DatasetSpec::Blobs { dim: 2, classes: 4, train: 1000, val: 1000, spread: 1.5, seed: 1 },
            model: ModelSpec::mlp(vec![32, 32], 4),
            steps: 500,
            batch_size: 64,
            schedule: ScheduleSpec::default(),
            metric: Metric::ValAccuracy,
            timeout_secs: 60.0,
            population: Some(100),
        }
    }

    /// `0.5 * lambda * |w|^2` with no data.
    pub fn quadratic(dim: usize, lambda: f64) -> Self {
        Self {
            id: "quadratic".into(),
            dataset: DatasetSpec::None,
            model: ModelSpec::Quadratic { dim, lambda },
            steps: 100,
            batch_size: 1,
            schedule: ScheduleSpec::default(),
            metric: Metric::NegValLoss,
            timeout_secs: 60.0,
            population: None,
        }
    }

    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "linreg" => Some(Self::linreg()),
            "mlp-blobs" => Some(Self::mlp_blobs()),
            "quadratic" => Some(Self::quadratic(10, 1.0)),
            _ => None,
        }
    }

    pub const BUILTIN: [&'static str; 3] = ["linreg", "mlp-blobs", "quadratic"];

    pub fn validate(&self) -> Result<(), String> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(format!("task {}: steps and batch_size must be positive", self.id));
        }
        if !(0.0..1.0).contains(&self.schedule.warmup_fraction) {
            return Err(format!("task {}: warmup_fraction must be in [0, 1)", self.id));
        }
        let classifier = matches!(self.model, ModelSpec::Mlp { .. });
        let data_ok = match (&self.dataset, &self.model) {
            (DatasetSpec::Blobs { classes, .. }, ModelSpec::Mlp { classes: c, .. }) => classes == c,
            (DatasetSpec::Linreg { .. }, ModelSpec::Linear) => true,
            (DatasetSpec::None, ModelSpec::Quadratic { .. }) => true,
            _ => false,
        };
        if !data_ok {
            return Err(format!("task {}: dataset does not fit the model", self.id));
        }
        if self.metric == Metric::ValAccuracy && !classifier {
            return Err(format!("task {}: val_accuracy needs a classifier", self.id));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(format!("task {}: timeout_secs must be positive", self.id));
        }
        Ok(())
    }

    pub fn prepare(&self) -> PreparedTask {
        PreparedTask {
            data: self.dataset.generate(),
            task: self.clone(),
        }
    }

    /// Scaled copy for a ladder level: more steps, wider hidden layers.
    pub fn scaled(&self, level: &LadderLevel) -> ProxyTask {
        let mut t = self.clone();
        t.id = format!("{}@{}", self.id, level.name);
        t.steps = self.steps * level.steps_factor;
        if let ModelSpec::Mlp { hidden, .. } = &mut t.model {
            hidden.iter_mut().for_each(|h| *h *= level.width_factor);
        }
        t.timeout_secs = self.timeout_secs * level.steps_factor as f64 * (level.width_factor * level.width_factor) as f64;
        t
    }

    /// Stable 64-bit id for seeding.
    pub fn id_hash(&self) -> u64 {
        self.id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

/// A task with its dataset materialized.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: ProxyTask,
    pub data: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessStatus {
    Ok,
    Nonfinite,
    Timeout,
}

/// Higher is better. Failed runs order below every successful one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    /// Negative infinity unless the run succeeded; stored as null.
    #[serde(with = "neg_inf_as_null")]
    pub value: f64,
    pub status: FitnessStatus,
}

impl Fitness {
    pub fn ok(value: f64) -> Self {
        if value.is_finite() {
            Self { value, status: FitnessStatus::Ok }
        } else {
            Self::nonfinite()
        }
    }

    pub fn nonfinite() -> Self {
        Self { value: f64::NEG_INFINITY, status: FitnessStatus::Nonfinite }
    }

    pub fn timeout() -> Self {
        Self { value: f64::NEG_INFINITY, status: FitnessStatus::Timeout }
    }

    pub fn is_ok(&self) -> bool {
        self.status == FitnessStatus::Ok
    }

    /// The value used for ordering.
    pub fn key(&self) -> f64 {
        if self.is_ok() {
            self.value
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn total_cmp(&self, other: &Fitness) -> Ordering {
        self.key().total_cmp(&other.key())
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Lets the caller stop a run; checked once per training step.
pub trait Deadline {
    fn expired(&self) -> bool;
}

/// Never expires.
pub struct NoDeadline;

impl Deadline for NoDeadline {
    fn expired(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub update_norm: f64,
    pub weight_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fitness: Fitness,
    /// Weights at the end of the run, or where it stopped.
    pub weights: TensorValue,
    pub steps_run: usize,
}

/// Seed of one evaluation, from the run seed, the program and the task.
pub fn eval_seed(global: u64, hash: HashValue, task: &ProxyTask) -> u64 {
    derive(&[global, hash.0 as u64, (hash.0 >> 64) as u64, task.id_hash()])
}

impl PreparedTask {
    pub fn init_weights(&self, seed: u64) -> TensorValue {
        self.task.model.init(self.task.dataset.input_dim(), &mut seeded(seed, 0))
    }

    pub fn signature(&self) -> Signature {
        Signature::of(&self.init_weights(0))
    }

    pub fn train_loss(&self, w: &TensorValue) -> f64 {
        self.task.model.loss(w, &self.data.train)
    }

    /// The fitness metric of `w` on the held-out split.
    pub fn metric(&self, w: &TensorValue) -> f64 {
        match self.task.metric {
            Metric::ValAccuracy => self.task.model.accuracy(w, &self.data.val),
            Metric::NegValLoss => -self.task.model.loss(w, &self.data.val),
        }
    }

    /// Runs the training loop with `rule`, weights initialized from `seed`
    /// and minibatches drawn from a stream of the same seed.
    pub fn train(
        &self,
        rule: &mut dyn UpdateRule,
        seed: u64,
        deadline: &dyn Deadline,
        mut observe: impl FnMut(&StepMetrics),
    ) -> TrainOutcome {
        let task = &self.task;
        let mut w = self.init_weights(seed);
        let mut batches = seeded(seed, 1);
        let n = self.data.train.len();
        let mut idx = vec![0usize; task.batch_size];
        let stop = |fitness, weights, steps_run| TrainOutcome { fitness, weights, steps_run };
        for step in 0..task.steps {
            if deadline.expired() {
                return stop(Fitness::timeout(), w, step);
            }
            let lr = schedule(step, task.steps, &task.schedule);
            let batch = if n == 0 {
                self.data.train.clone()
            } else {
                idx.iter_mut().for_each(|i| *i = batches.random_range(0..n));
                self.data.train.select(&idx)
            };
            let (loss, g) = task.model.forward_backward(&w, &batch);
            if !loss.is_finite() || !g.all_finite() {
                return stop(Fitness::nonfinite(), w, step);
            }
            let update = match rule.update(&w, &g, lr) {
                Ok(u) if u.all_finite() => u,
                _ => return stop(Fitness::nonfinite(), w, step),
            };
            w = match w.zip_with(&update, |a, b| a - b) {
                Ok(next) if next.all_finite() => next,
                _ => return stop(Fitness::nonfinite(), w, step),
            };
            observe(&StepMetrics {
                step,
                loss,
                lr,
                update_norm: update.global_norm(),
                weight_norm: w.global_norm(),
            });
        }
        let fitness = Fitness::ok(self.metric(&w));
        stop(fitness, w, task.steps)
    }

    /// Fitness of `p`. Rejects programs that do not type-check against the
    /// task's weights.
    pub fn evaluate(&self, p: &Program, seed: u64, deadline: &dyn Deadline) -> Result<Fitness, TypeError> {
        let w = self.init_weights(seed);
        infer(p, &Signature::of(&w))?;
        let mut rule = ProgramRule::new(p, &w).expect("inferred programs compile");
        Ok(self.train(&mut rule, seed, deadline, |_| {}).fitness)
    }

    /// Training losses at `w + eps`, `eps ~ N(0, sigma^2 I)`, one per draw.
    pub fn perturbed_losses(&self, w: &TensorValue, sigma: f64, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed, 2);
        (0..draws)
            .map(|_| {
                let mut v = w.clone();
                v.for_each_mut(&mut |x| *x += sigma * rng.sample::<f64, _>(StandardNormal));
                self.train_loss(&v)
            })
            .collect()
    }

    /// Mean training loss under Gaussian weight noise.
    pub fn flatness(&self, w: &TensorValue, sigma: f64, draws: usize, seed: u64) -> f64 {
        assert!(sigma > 0.0 && draws >= 1, "flatness needs sigma > 0 and draws >= 1");
        let losses = self.perturbed_losses(w, sigma, draws, seed);
        losses.iter().sum::<f64>() / draws as f64
    }
}

/// Convenience wrapper over [`PreparedTask::evaluate`].
pub fn evaluate_fitness(p: &Program, task: &ProxyTask, seed: u64) -> Result<Fitness, TypeError> {
    task.prepare().evaluate(p, seed, &NoDeadline)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub name: String,
    pub steps_factor: usize,
    pub width_factor: usize,
}

/// Meta-validation tasks of increasing size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ladder {
    pub levels: Vec<LadderLevel>,
}

impl Default for Ladder {
    fn default() -> Self {
        let level = |name: &str, steps_factor, width_factor| LadderLevel { name: name.into(), steps_factor, width_factor };
        Self { levels: vec![level("A", 1, 1), level("B", 10, 2), level("C", 100, 4)] }
    }
}

impl Ladder {
    pub fn level(&self, name: &str) -> Option<&LadderLevel> {
        self.levels.iter().find(|l| l.name == name)
    }

    pub fn truncated(&self, n: usize) -> Ladder {
        Ladder { levels: self.levels.iter().take(n).cloned().collect() }
    }
}

/// Fitness of `p` on the ladder level's scaled task.
pub fn meta_validate(p: &Program, task: &ProxyTask, level: &LadderLevel, seed: u64) -> Result<Fitness, TypeError> {
    evaluate_fitness(p, &task.scaled(level), seed)
}

/// One evaluation request.
pub struct EvalJob<'a> {
    pub program: &'a Program,
    pub task: &'a PreparedTask,
    pub seed: u64,
}

/// Evaluates independent jobs, possibly in parallel. Results come back in job order.
pub trait BatchEvaluator {
    fn evaluate(&self, jobs: &[EvalJob<'_>]) -> Vec<Fitness>;
}

/// One job after another, without a deadline.
pub struct Sequential;

impl BatchEvaluator for Sequential {
    fn evaluate(&self, jobs: &[EvalJob<'_>]) -> Vec<Fitness> {
        jobs.iter()
            .map(|j| j.task.evaluate(j.program, j.seed, &NoDeadline).unwrap_or_else(|_| Fitness::nonfinite()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelLevel {
    pub level: String,
    /// Not evaluated when no candidate reached this level.
    pub baseline: Option<Fitness>,
    /// `(candidate index, fitness)` for every candidate evaluated at this level.
    pub evaluated: Vec<(usize, Fitness)>,
    /// Candidates strictly above the baseline.
    pub survivors: Vec<usize>,
}

/// Candidates pass a level only if they strictly beat the baseline there;
/// only survivors move on to the next level.
pub fn funnel_select(
    candidates: &[Program],
    task: &ProxyTask,
    ladder: &Ladder,
    baseline: &Program,
    seed: u64,
    evaluator: &dyn BatchEvaluator,
) -> Vec<FunnelLevel> {
    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    let mut out = Vec::with_capacity(ladder.levels.len());
    for level in &ladder.levels {
        if alive.is_empty() {
            out.push(FunnelLevel { level: level.name.clone(), baseline: None, evaluated: Vec::new(), survivors: Vec::new() });
            continue;
        }
        let prepared = task.scaled(level).prepare();
        let mut jobs = vec![EvalJob { program: baseline, task: &prepared, seed }];
        jobs.extend(alive.iter().map(|&i| EvalJob { program: &candidates[i], task: &prepared, seed }));
        let results = evaluator.evaluate(&jobs);
        let base = results[0];
        let evaluated: Vec<(usize, Fitness)> = alive.iter().copied().zip(results.into_iter().skip(1)).collect();
        alive = evaluated
            .iter()
            .filter(|(_, f)| f.total_cmp(&base) == Ordering::Greater)
            .map(|(i, _)| *i)
            .collect();
        out.push(FunnelLevel { level: level.name.clone(), baseline: Some(base), evaluated, survivors: alive.clone() });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    fn small_linreg() -> ProxyTask {
        ProxyTask {
            dataset: DatasetSpec::Linreg { dim: 10, train: 200, val: 200, noise: 0.1, seed: 1 },
            steps: 300,
            ..ProxyTask::linreg()
        }
    }

    fn program(text: &str) -> Program {
        alloc::format!("def train(w, g, m, v, lr):\n{text}  return update, m, v\n").parse().unwrap()
    }

    #[test]
    fn builtin_tasks_validate() {
        for id in ProxyTask::BUILTIN {
            ProxyTask::builtin(id).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn fitness_ordering() {
        let ok = Fitness::ok(-1e300);
        assert_eq!(Fitness::nonfinite().total_cmp(&ok), Ordering::Less);
        assert_eq!(Fitness::timeout().total_cmp(&ok), Ordering::Less);
        assert_eq!(Fitness::ok(f64::NAN).status, FitnessStatus::Nonfinite);
    }

    #[test]
    fn adamw_beats_zero_update_on_linreg() {
        let task = small_linreg();
        let adamw = evaluate_fitness(&assets::adamw(), &task, 3).unwrap();
        let zero = evaluate_fitness(&program("  update = g * 0.0\n"), &task, 3).unwrap();
        assert!(adamw.is_ok() && zero.is_ok());
        assert!(adamw.value > zero.value, "{adamw:?} vs {zero:?}");
        // The noise floor bounds the achievable validation loss: -0.5 * noise^2.
        assert!(adamw.value < -0.5 * 0.1 * 0.1 * 0.5);
    }

    #[test]
    fn huge_steps_diverge() {
        let f = evaluate_fitness(&program("  update = g * 1000000.0\n"), &small_linreg(), 3).unwrap();
        assert_eq!(f.status, FitnessStatus::Nonfinite);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let task = small_linreg();
        let a = evaluate_fitness(&assets::adamw(), &task, 9).unwrap();
        let b = evaluate_fitness(&assets::adamw(), &task, 9).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn invalid_program_is_rejected() {
        let p = program("  update = dot(g, w)\n");
        assert!(evaluate_fitness(&p, &small_linreg(), 0).is_err());
    }

    struct After(core::cell::Cell<usize>);

    impl Deadline for After {
        fn expired(&self) -> bool {
            let n = self.0.get();
            self.0.set(n.saturating_sub(1));
            n == 0
        }
    }

    #[test]
    fn deadline_gives_timeout() {
        let prepared = small_linreg().prepare();
        let f = prepared.evaluate(&assets::adamw(), 0, &After(core::cell::Cell::new(5))).unwrap();
        assert_eq!(f.status, FitnessStatus::Timeout);
    }

    #[test]
    fn ladder_arithmetic() {
        let ladder = Ladder::default();
        let task = ProxyTask::mlp_blobs();
        let a = task.scaled(ladder.level("A").unwrap());
        let b = task.scaled(ladder.level("B").unwrap());
        assert_eq!(b.steps, 10 * a.steps);
        assert_eq!(b.model, ModelSpec::mlp(vec![64, 64], 4));
        let p = assets::adamw();
        let small = small_linreg();
        let level_a = meta_validate(&p, &small, ladder.level("A").unwrap(), 4).unwrap();
        assert_eq!(level_a, evaluate_fitness(&p, &small, 4).unwrap());
    }

    #[test]
    fn funnel_edge_cases() {
        let task = small_linreg();
        let ladder = Ladder::default().truncated(2);
        let levels = funnel_select(&[], &task, &ladder, &assets::adamw(), 1, &Sequential);
        assert!(levels.iter().all(|l| l.survivors.is_empty()));
        let same = funnel_select(&[assets::adamw()], &task, &ladder, &assets::adamw(), 1, &Sequential);
        assert!(same[0].survivors.is_empty());
    }

    #[test]
    fn flatness_limits() {
        let prepared = ProxyTask::quadratic(5, 2.0).prepare();
        let w = prepared.init_weights(1);
        let loss = prepared.train_loss(&w);
        assert!((prepared.flatness(&w, 1e-8, 10, 0) - loss).abs() < 1e-6);
        assert_eq!(prepared.flatness(&w, 0.1, 1, 3), prepared.flatness(&w, 0.1, 1, 3));
    }
}
