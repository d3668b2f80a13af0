//! Insert / delete / modify mutations over the statement list.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Arg, Program, Statement, DEFAULT_MAX_STATEMENTS};
use crate::function::Function;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Insert,
    Delete,
    Modify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationConfig {
    /// Relative weights of insert, delete, modify.
    pub weights: [f64; 3],
    /// Probability that a freshly drawn argument is a N(0,1) constant rather
    /// than an existing variable.
    pub constant_arg_prob: f64,
    /// Probability that modifying a constant argument rescales it by `2^a`,
    /// `a ~ N(0,1)`, instead of replacing it.
    pub scale_prob: f64,
    /// Probability that an inserted statement writes a fresh variable rather
    /// than overwriting an existing one.
    pub fresh_name_prob: f64,
    pub max_statements: usize,
    /// Re-mutation attempts before a new parent is drawn.
    pub max_retries: usize,
    /// Only rescale existing constants (hyperparameter tuning baseline).
    pub constants_only: bool,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            constant_arg_prob: 0.2,
            scale_prob: 0.5,
            fresh_name_prob: 0.5,
            max_statements: DEFAULT_MAX_STATEMENTS,
            max_retries: 100,
            constants_only: false,
        }
    }
}

impl MutationConfig {
    pub fn constants_only() -> Self {
        Self {
            weights: [0.0, 0.0, 1.0],
            constants_only: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(format!(
                "mutation weights must be nonnegative and not all zero: {:?}",
                self.weights
            ));
        }
        for (name, p) in [
            ("constant_arg_prob", self.constant_arg_prob),
            ("scale_prob", self.scale_prob),
            ("fresh_name_prob", self.fresh_name_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.max_retries == 0 {
            return Err("max_retries must be positive".into());
        }
        Ok(())
    }

    fn pick_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> MutationKind {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (w, kind) in self
            .weights
            .iter()
            .zip([MutationKind::Insert, MutationKind::Delete, MutationKind::Modify])
        {
            if u < *w {
                return kind;
            }
            u -= w;
        }
        MutationKind::Modify
    }
}

/// Applies one random mutation. The child may be invalid; callers re-mutate
/// until abstract execution accepts it.
///
/// Returns `None` when the mutation is a no-op: an insert into a program at
/// the statement cap, or a constants-only mutation of a program without
/// constants.
pub fn mutate<R: Rng + ?Sized>(p: &Program, cfg: &MutationConfig, rng: &mut R) -> Option<Program> {
    if cfg.constants_only {
        return rescale_random_constant(p, rng);
    }
    match cfg.pick_kind(rng) {
        MutationKind::Insert => insert(p, cfg, rng),
        MutationKind::Delete if p.is_empty() => insert(p, cfg, rng),
        MutationKind::Delete => {
            let mut child = p.clone();
            child.statements.remove(rng.random_range(0..p.len()));
            Some(child)
        }
        MutationKind::Modify => modify(p, cfg, rng),
    }
}

/// A program built from `len` random inserts into the empty program.
pub fn random_program<R: Rng + ?Sized>(len: usize, cfg: &MutationConfig, rng: &mut R) -> Program {
    let cfg = MutationConfig {
        max_statements: usize::MAX,
        ..cfg.clone()
    };
    let mut p = Program::default();
    for _ in 0..len {
        p = insert(&p, &cfg, rng).expect("uncapped insert");
    }
    p
}

fn insert<R: Rng + ?Sized>(p: &Program, cfg: &MutationConfig, rng: &mut R) -> Option<Program> {
    if p.len() >= cfg.max_statements {
        return None;
    }
    let position = rng.random_range(0..=p.len());
    let function = Function::ALL[rng.random_range(0..Function::ALL.len())];
    let args = (0..function.arity())
        .map(|_| random_arg(p, position, cfg, rng))
        .collect();
    let out = if rng.random::<f64>() < cfg.fresh_name_prob {
        fresh_name(p, rng)
    } else {
        let mut names: Vec<&str> = p.visible_names(position);
        if !names.contains(&"update") {
            names.push("update");
        }
        String::from(names[rng.random_range(0..names.len())])
    };
    let mut child = p.clone();
    child
        .statements
        .insert(position, Statement { out, function, args });
    Some(child)
}

fn modify<R: Rng + ?Sized>(p: &Program, cfg: &MutationConfig, rng: &mut R) -> Option<Program> {
    let candidates: Vec<usize> = (0..p.len())
        .filter(|&i| !p.statements[i].args.is_empty())
        .collect();
    if candidates.is_empty() {
        return insert(p, cfg, rng);
    }
    let i = candidates[rng.random_range(0..candidates.len())];
    let j = rng.random_range(0..p.statements[i].args.len());
    let replacement = match p.statements[i].args[j] {
        Arg::Const(c) if rng.random::<f64>() < cfg.scale_prob => Arg::Const(rescale(c, rng)),
        _ => random_arg(p, i, cfg, rng),
    };
    let mut child = p.clone();
    child.statements[i].args[j] = replacement;
    Some(child)
}

fn rescale_random_constant<R: Rng + ?Sized>(p: &Program, rng: &mut R) -> Option<Program> {
    let slots: Vec<(usize, usize)> = p
        .statements
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.args
                .iter()
                .enumerate()
                .filter(|(_, a)| matches!(a, Arg::Const(_)))
                .map(move |(j, _)| (i, j))
        })
        .collect();
    if slots.is_empty() {
        return None;
    }
    let (i, j) = slots[rng.random_range(0..slots.len())];
    let mut child = p.clone();
    if let Arg::Const(c) = child.statements[i].args[j] {
        child.statements[i].args[j] = Arg::Const(rescale(c, rng));
    }
    Some(child)
}

/// `c * 2^a` with `a ~ N(0, 1)`.
pub(crate) fn rescale<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let a: f64 = rng.sample(StandardNormal);
    c * libm::exp2(a)
}

fn random_arg<R: Rng + ?Sized>(p: &Program, position: usize, cfg: &MutationConfig, rng: &mut R) -> Arg {
    if rng.random::<f64>() < cfg.constant_arg_prob {
        Arg::Const(rng.sample(StandardNormal))
    } else {
        let names = p.visible_names(position);
        Arg::var(names[rng.random_range(0..names.len())])
    }
}

fn fresh_name<R: Rng + ?Sized>(p: &Program, rng: &mut R) -> String {
    let taken = p.all_names();
    loop {
        let name = format!("v{}", rng.random_range(0..1000u32));
        if !taken.contains(&name.as_str()) && name != "v" {
            return name;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{infer, Signature};
    use crate::assets;
    use crate::rng::seeded;
    use alloc::vec;

    #[test]
    fn forced_delete_preserves_order() {
        let p = assets::adamw();
        let cfg = MutationConfig {
            weights: [0.0, 1.0, 0.0],
            ..Default::default()
        };
        let mut rng = seeded(3, 0);
        let child = mutate(&p, &cfg, &mut rng).unwrap();
        assert_eq!(child.len(), p.len() - 1);
        let removed = (0..p.len())
            .find(|&i| i == child.len() || child.statements[i] != p.statements[i])
            .unwrap();
        let mut expected = p.statements.clone();
        expected.remove(removed);
        assert_eq!(child.statements, expected);
    }

    #[test]
    fn delete_at_index_one() {
        let p: Program = "def train(w, g, m, v, lr):\n  a = g * 2.0\n  b = a + 1.0\n  update = a * lr\n  return update, m, v\n"
            .parse()
            .unwrap();
        let mut child = p.clone();
        child.statements.remove(1);
        assert_eq!(child.len(), 2);
        assert_eq!(child.statements[0], p.statements[0]);
        assert_eq!(child.statements[1], p.statements[2]);
    }

    #[test]
    fn delete_on_empty_inserts() {
        let cfg = MutationConfig {
            weights: [0.0, 1.0, 0.0],
            ..Default::default()
        };
        let child = mutate(&Program::default(), &cfg, &mut seeded(1, 0)).unwrap();
        assert_eq!(child.len(), 1);
    }

    #[test]
    fn rescale_by_power_of_two() {
        // a = 1 doubles
        assert_eq!(0.9 * libm::exp2(1.0), 1.8);
    }

    #[test]
    fn insert_respects_cap() {
        let p = assets::adamw();
        let cfg = MutationConfig {
            weights: [1.0, 0.0, 0.0],
            max_statements: p.len(),
            ..Default::default()
        };
        assert!(mutate(&p, &cfg, &mut seeded(1, 0)).is_none());
    }

    #[test]
    fn constants_only_touches_only_constants() {
        let p = assets::adamw();
        let cfg = MutationConfig::constants_only();
        let mut rng = seeded(9, 0);
        for _ in 0..200 {
            let child = mutate(&p, &cfg, &mut rng).unwrap();
            assert_eq!(child.len(), p.len());
            let diffs: Vec<_> = p
                .statements
                .iter()
                .zip(&child.statements)
                .filter(|(a, b)| a != b)
                .collect();
            assert_eq!(diffs.len(), 1);
            let (a, b) = diffs[0];
            assert_eq!(a.out, b.out);
            assert_eq!(a.function, b.function);
            for (x, y) in a.args.iter().zip(&b.args) {
                match (x, y) {
                    (Arg::Var(n1), Arg::Var(n2)) => assert_eq!(n1, n2),
                    (Arg::Const(_), Arg::Const(_)) => {}
                    _ => panic!("kind changed"),
                }
            }
        }
    }

    #[test]
    fn dead_insert_is_accepted() {
        // A statement whose output nobody reads is still a valid program.
        let mut p = assets::adamw();
        p.statements.insert(
            0,
            Statement::new("v7", Function::Sin, vec![Arg::var("g")]),
        );
        let sig = Signature::array(&[4]);
        assert!(infer(&p, &sig).is_ok());
    }

    #[test]
    fn mutation_closure_within_retry_budget() {
        let sig = Signature::array(&[4]);
        let cfg = MutationConfig::default();
        let mut rng = seeded(11, 0);
        let mut parent = assets::adamw();
        for trial in 0..10_000 {
            let child = (0..cfg.max_retries)
                .filter_map(|_| mutate(&parent, &cfg, &mut rng))
                .find(|c| infer(c, &sig).is_ok());
            let child = child.unwrap_or_else(|| panic!("trial {trial}: no valid child"));
            if trial % 7 == 0 {
                parent = child;
            }
            if parent.len() > 40 {
                parent = assets::adamw();
            }
        }
    }

    #[test]
    fn random_programs_have_requested_length() {
        let mut rng = seeded(5, 0);
        for len in [0, 1, 5, 20] {
            assert_eq!(random_program(len, &MutationConfig::default(), &mut rng).len(), len);
        }
    }
}
