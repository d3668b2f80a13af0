//! Shrinking a discovered program to something a person can read.
//!
//! Three stages: drop statements no output depends on, greedily delete
//! statements whose removal barely moves fitness, then rename variables into
//! a canonical form.
//!
//! The last step from the discovered program to Lion is algebra rather than
//! deletion. With `c = interp(g, v, a1)` and `v' = interp(g, c, a2)`,
//!
//! ```text
//! v' = (1 - a2) g + a2 ((1 - a1) g + a1 v) = (1 - a1 a2) g + a1 a2 v
//! ```
//!
//! so the pair is one EMA with factor `a1 a2`, while `c / sqrt(c * c)` is
//! `sign(c)` away from zero. [`merged_lion`] performs that rewrite on the
//! constants; the gradient preprocessing (`clip`, `arcsin`) is left out and
//! its effect measured in tests.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, functional_hash, strip_redundant, TypeError};
use crate::optim::Hyperparams;
use crate::program::{Arg, Program, RETURNS};
use crate::task::{eval_seed, Deadline, Fitness, PreparedTask};

pub const DEFAULT_EPSILON: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplifyError {
    #[error("program is invalid for the task: {0}")]
    Invalid(TypeError),
    #[error("baseline fitness is not usable ({0:?}); nothing to compare deletions against")]
    Baseline(Fitness),
}

/// One tentative deletion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deletion {
    pub pass: usize,
    pub index: usize,
    pub statement: String,
    /// False when the program no longer type-checks without it.
    pub valid: bool,
    pub fitness: Option<Fitness>,
    /// Fitness before minus fitness after; positive is a loss.
    pub drop: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifyReport {
    pub original_statements: usize,
    pub stripped_statements: usize,
    pub pruned_statements: usize,
    pub epsilon: f64,
    pub baseline: Fitness,
    pub final_fitness: Fitness,
    pub deletions: Vec<Deletion>,
    pub program: Program,
}

impl SimplifyReport {
    /// Sum of the drops of accepted deletions.
    pub fn cumulative_drop(&self) -> f64 {
        self.deletions.iter().filter(|d| d.accepted).filter_map(|d| d.drop).sum()
    }
}

fn fitness(p: &Program, task: &PreparedTask, seed: u64, deadline: &dyn Deadline) -> Result<Fitness, TypeError> {
    task.evaluate(p, eval_seed(seed, functional_hash(p), &task.task), deadline)
}

/// Greedy single-statement deletion. Every statement is tried in order; a
/// deletion sticks when the program stays valid and fitness falls by at most
/// `epsilon` relative to the current program. Passes repeat until none
/// deletes anything. With an infinite `epsilon` every valid deletion is
/// taken without evaluating.
pub fn prune_by_fitness(
    p: &Program,
    task: &PreparedTask,
    epsilon: f64,
    seed: u64,
    deadline: &dyn Deadline,
) -> Result<(Program, Fitness, Vec<Deletion>), SimplifyError> {
    let sig = task.signature();
    let baseline = fitness(p, task, seed, deadline).map_err(SimplifyError::Invalid)?;
    if !baseline.is_ok() {
        return Err(SimplifyError::Baseline(baseline));
    }
    let evaluate_all = epsilon.is_finite();
    let mut current = strip_redundant(p);
    let mut current_fitness = baseline;
    let mut log = Vec::new();
    for pass in 0.. {
        let mut changed = false;
        let mut i = 0;
        while i < current.len() {
            let mut candidate = current.clone();
            let removed = candidate.statements.remove(i);
            let mut entry = Deletion {
                pass,
                index: i,
                statement: statement_text(&removed),
                valid: analyze(&candidate, &sig).is_ok(),
                fitness: None,
                drop: None,
                accepted: false,
            };
            if entry.valid && evaluate_all {
                let f = fitness(&candidate, task, seed, deadline).map_err(SimplifyError::Invalid)?;
                entry.fitness = Some(f);
                entry.drop = Some(current_fitness.value - f.key());
                entry.accepted = f.is_ok() && current_fitness.value - f.value <= epsilon;
            } else if entry.valid {
                entry.accepted = true;
            }
            if entry.accepted {
                current = strip_redundant(&candidate);
                if let Some(f) = entry.fitness {
                    current_fitness = f;
                }
                changed = true;
            } else {
                i += 1;
            }
            log.push(entry);
        }
        if !changed {
            break;
        }
    }
    if !evaluate_all {
        current_fitness = fitness(&current, task, seed, deadline).map_err(SimplifyError::Invalid)?;
    }
    Ok((current, current_fitness, log))
}

fn statement_text(s: &crate::program::Statement) -> String {
    Program::new(alloc::vec![s.clone()]).print().lines().nth(1).unwrap_or_default().trim().to_string()
}

/// Dead code removed, statement order kept, and variables renamed: the last
/// definition of each returned name keeps that name and every other
/// statement writes a fresh `v1`, `v2`, ... in order.
pub fn canonicalize(p: &Program) -> Program {
    let stripped = strip_redundant(p);
    let mut last_def: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in stripped.statements.iter().enumerate() {
        last_def.insert(s.out.as_str(), i);
    }
    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let mut fresh = 0;
    let mut out = Vec::with_capacity(stripped.len());
    for (i, s) in stripped.statements.iter().enumerate() {
        let args = s
            .args
            .iter()
            .map(|a| match a {
                Arg::Var(n) => Arg::Var(names.get(n).cloned().unwrap_or_else(|| n.clone())),
                c => c.clone(),
            })
            .collect();
        let name = if RETURNS.contains(&s.out.as_str()) && last_def[s.out.as_str()] == i {
            s.out.clone()
        } else {
            fresh += 1;
            format!("v{fresh}")
        };
        names.insert(s.out.clone(), name.clone());
        out.push(crate::program::Statement { out: name, function: s.function, args });
    }
    Program::new(out)
}

/// Strip, prune and canonicalize with a report of every stage.
pub fn simplify(
    p: &Program,
    task: &PreparedTask,
    epsilon: f64,
    seed: u64,
    deadline: &dyn Deadline,
) -> Result<SimplifyReport, SimplifyError> {
    let stripped = strip_redundant(p);
    let baseline = fitness(p, task, seed, deadline).map_err(SimplifyError::Invalid)?;
    let (pruned, final_fitness, deletions) = prune_by_fitness(&stripped, task, epsilon, seed, deadline)?;
    Ok(SimplifyReport {
        original_statements: p.len(),
        stripped_statements: stripped.len(),
        pruned_statements: pruned.len(),
        epsilon,
        baseline,
        final_fitness,
        deletions,
        program: canonicalize(&pruned),
    })
}

/// Lion hyperparameters equivalent to `c = interp(g, v, a1)`, `update =
/// sign(c) + lambda * w`, `v' = interp(g, c, a2)`, with the learning rate
/// multiplied by `lr_scale`.
pub fn merged_lion(a1: f64, a2: f64, lambda: f64, lr_scale: f64) -> Hyperparams {
    Hyperparams { beta1: a1, beta2: a1 * a2, eps: 0.0, lambda, lr: lr_scale }
}
