//! Hand-written reference optimizers and the update-rule interface the
//! training loop drives.

use alloc::string::String;
use alloc::vec::Vec;

use crate::function::sign;
use crate::program::{Compiled, ExecError, Inputs, Program};
use crate::value::TensorValue;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay strength.
    pub lambda: f64,
    /// Peak learning rate.
    pub lr: f64,
}

impl Hyperparams {
    pub const fn adamw() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda: 0.0,
            lr: 1e-3,
        }
    }

    pub const fn lion() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 0.0,
            lambda: 0.0,
            lr: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0
            && self.lambda >= 0.0
            && self.lr.is_finite();
        if ok {
            Ok(())
        } else {
            Err(alloc::format!("invalid hyperparameters {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: TensorValue,
    pub v: TensorValue,
    pub t: u64,
}

impl AdamWState {
    pub fn new(w: &TensorValue) -> Self {
        Self {
            m: w.zeros_like(),
            v: w.zeros_like(),
            t: 0,
        }
    }
}

/// State of Lion and of the single-EMA ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub m: TensorValue,
}

impl MomentumState {
    pub fn new(w: &TensorValue) -> Self {
        Self { m: w.zeros_like() }
    }
}

/// Named state buffers, for memory accounting.
pub trait Buffers {
    fn buffers(&self) -> Vec<(&'static str, &TensorValue)>;

    fn buffer_count(&self) -> usize {
        self.buffers().len()
    }
}

impl Buffers for AdamWState {
    fn buffers(&self) -> Vec<(&'static str, &TensorValue)> {
        alloc::vec![("m", &self.m), ("v", &self.v)]
    }
}

impl Buffers for MomentumState {
    fn buffers(&self) -> Vec<(&'static str, &TensorValue)> {
        alloc::vec![("m", &self.m)]
    }
}

/// Visits matching elements of same-structured values.
fn zip3_mut(
    w: &TensorValue,
    g: &TensorValue,
    m: &mut TensorValue,
    mut f: impl FnMut(f64, f64, &mut f64) -> f64,
) -> TensorValue {
    assert!(w.same_structure(g) && w.same_structure(m), "state does not match weights");
    let ws = w.flatten();
    let gs = g.flatten();
    let mut out = Vec::with_capacity(ws.len());
    let mut i = 0;
    m.for_each_mut(&mut |mi| {
        out.push(f(ws[i], gs[i], mi));
        i += 1;
    });
    let mut j = 0;
    let mut update = w.clone();
    update.for_each_mut(&mut |x| {
        *x = out[j];
        j += 1;
    });
    update
}

fn interp(x: f64, y: f64, a: f64) -> f64 {
    (1.0 - a) * x + a * y
}

/// The step `u` such that the new weights are `w - u`.
pub fn adamw_update(w: &TensorValue, g: &TensorValue, state: &mut AdamWState, hp: &Hyperparams, lr_t: f64) -> TensorValue {
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(hp.beta1, t);
    let c2 = 1.0 - libm::pow(hp.beta2, t);
    let m_new = g.zip_with(&state.m, |g, m| interp(g, m, hp.beta1)).expect("state matches weights");
    let mut v_new = g.zip_with(&state.v, |g, v| interp(g * g, v, hp.beta2)).expect("state matches weights");
    let mut i = 0;
    let ms = m_new.flatten();
    let update = zip3_mut(w, g, &mut v_new, |w, _, v| {
        let m_hat = ms[i] / c1;
        let v_hat = *v / c2;
        i += 1;
        lr_t * (m_hat / (libm::sqrt(v_hat) + hp.eps) + hp.lambda * w)
    });
    state.m = m_new;
    state.v = v_new;
    update
}

pub fn adamw_step(w: &TensorValue, g: &TensorValue, state: &mut AdamWState, hp: &Hyperparams, lr_t: f64) -> TensorValue {
    let u = adamw_update(w, g, state, hp, lr_t);
    subtract(w, &u)
}

/// Lion: the update uses the `beta1` interpolation, the stored momentum the
/// `beta2` one, and the momentum is refreshed after the update is formed.
pub fn lion_update(w: &TensorValue, g: &TensorValue, state: &mut MomentumState, hp: &Hyperparams, lr_t: f64) -> TensorValue {
    zip3_mut(w, g, &mut state.m, |w, g, m| {
        let c = interp(g, *m, hp.beta1);
        let u = (sign(c) + w * hp.lambda) * lr_t;
        *m = interp(g, *m, hp.beta2);
        u
    })
}

pub fn lion_step(w: &TensorValue, g: &TensorValue, state: &mut MomentumState, hp: &Hyperparams, lr_t: f64) -> TensorValue {
    let u = lion_update(w, g, state, hp, lr_t);
    subtract(w, &u)
}

/// One EMA serves as both update direction and state.
pub fn ablation_update(w: &TensorValue, g: &TensorValue, state: &mut MomentumState, beta: f64, lr_t: f64, lambda: f64) -> TensorValue {
    zip3_mut(w, g, &mut state.m, |w, g, m| {
        *m = interp(g, *m, beta);
        (sign(*m) + w * lambda) * lr_t
    })
}

pub fn ablation_step(w: &TensorValue, g: &TensorValue, state: &mut MomentumState, beta: f64, lr_t: f64, lambda: f64) -> TensorValue {
    let u = ablation_update(w, g, state, beta, lr_t, lambda);
    subtract(w, &u)
}

fn subtract(w: &TensorValue, u: &TensorValue) -> TensorValue {
    w.zip_with(u, |a, b| a - b).expect("update matches weights")
}

/// Produces the step subtracted from the weights. `lr` is the schedule value
/// at the current step (peak 1).
pub trait UpdateRule {
    fn update(&mut self, w: &TensorValue, g: &TensorValue, lr: f64) -> Result<TensorValue, ExecError>;
}

/// A DSL program with its two state slots.
pub struct ProgramRule {
    compiled: Compiled,
    m: TensorValue,
    v: TensorValue,
}

impl ProgramRule {
    pub fn new(p: &Program, w: &TensorValue) -> Result<Self, ExecError> {
        Ok(Self {
            compiled: p.compile()?,
            m: w.zeros_like(),
            v: w.zeros_like(),
        })
    }
}

impl UpdateRule for ProgramRule {
    fn update(&mut self, w: &TensorValue, g: &TensorValue, lr: f64) -> Result<TensorValue, ExecError> {
        let out = self.compiled.execute(Inputs {
            w: w.clone(),
            g: g.clone(),
            m: core::mem::replace(&mut self.m, TensorValue::Scalar(0.0)),
            v: core::mem::replace(&mut self.v, TensorValue::Scalar(0.0)),
            lr,
        })?;
        self.m = out.m;
        self.v = out.v;
        Ok(out.update)
    }
}

/// Which reference optimizer to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    AdamW(Hyperparams),
    Lion(Hyperparams),
    /// Single-EMA sign momentum; uses `beta1`, `lambda`, `lr`.
    Ablation(Hyperparams),
}

pub enum ReferenceRule {
    AdamW(Hyperparams, AdamWState),
    Lion(Hyperparams, MomentumState),
    Ablation(Hyperparams, MomentumState),
}

impl Reference {
    pub fn rule(&self, w: &TensorValue) -> ReferenceRule {
        match *self {
            Reference::AdamW(hp) => ReferenceRule::AdamW(hp, AdamWState::new(w)),
            Reference::Lion(hp) => ReferenceRule::Lion(hp, MomentumState::new(w)),
            Reference::Ablation(hp) => ReferenceRule::Ablation(hp, MomentumState::new(w)),
        }
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        match self {
            Reference::AdamW(hp) | Reference::Lion(hp) | Reference::Ablation(hp) => hp,
        }
    }
}

impl UpdateRule for ReferenceRule {
    fn update(&mut self, w: &TensorValue, g: &TensorValue, lr: f64) -> Result<TensorValue, ExecError> {
        Ok(match self {
            ReferenceRule::AdamW(hp, s) => adamw_update(w, g, s, hp, hp.lr * lr),
            ReferenceRule::Lion(hp, s) => lion_update(w, g, s, hp, hp.lr * lr),
            ReferenceRule::Ablation(hp, s) => ablation_update(w, g, s, hp.beta1, hp.lr * lr, hp.lambda),
        })
    }
}

/// Published hyperparameters for one model/task row, baseline and Lion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub key: &'static str,
    /// "AdamW" or "Adafactor"; both run as AdamW here.
    pub baseline_name: &'static str,
    pub baseline: Hyperparams,
    pub lion: Hyperparams,
}

const fn row(key: &'static str, baseline_name: &'static str, lr: f64, lambda: f64, lion_lr: f64, lion_lambda: f64, lm: bool) -> Preset {
    let (b2, eps, l1, l2) = if lm { (0.99, 1e-6, 0.95, 0.98) } else { (0.999, 1e-8, 0.9, 0.99) };
    Preset {
        key,
        baseline_name,
        baseline: Hyperparams { beta1: 0.9, beta2: b2, eps, lambda, lr },
        lion: Hyperparams { beta1: l1, beta2: l2, eps: 0.0, lambda: lion_lambda, lr: lion_lr },
    }
}

pub const PRESETS: [Preset; 17] = [
    row("resnet50", "AdamW", 3e-3, 0.1, 3e-4, 1.0, false),
    row("mixer-s16", "AdamW", 1e-2, 0.3, 3e-3, 1.0, false),
    row("mixer-b16", "AdamW", 1e-2, 0.3, 3e-3, 3.0, false),
    row("vit-s16", "AdamW", 1e-2, 0.1, 1e-3, 1.0, false),
    row("vit-s16-imagenet-aug", "AdamW", 3e-3, 0.1, 3e-4, 1.0, false),
    row("vit-b16", "AdamW", 3e-3, 0.3, 1e-3, 1.0, false),
    row("vit-b16-imagenet-aug", "AdamW", 1e-3, 1.0, 1e-4, 10.0, false),
    row("vit-b16-in21k", "AdamW", 1e-3, 0.1, 1e-4, 0.3, false),
    row("vit-l16-in21k", "AdamW", 1e-3, 0.3, 1e-4, 1.0, false),
    row("vit-b16-jft", "AdamW", 6e-4, 0.1, 1e-4, 0.3, false),
    row("vit-l16-jft", "AdamW", 3e-4, 0.1, 1e-4, 0.3, false),
    row("vit-h14-jft", "AdamW", 3e-4, 0.1, 3e-5, 0.3, false),
    row("lit-g14-l", "AdamW", 1e-3, 0.1, 2e-4, 0.5, false),
    row("diffusion", "AdamW", 3e-4, 0.01, 3e-5, 0.1, false),
    row("lm-wiki40b", "AdamW", 3e-3, 0.001, 3e-4, 0.01, true),
    row("lm-1.1b-2.1b", "Adafactor", 2e-3, 0.0005, 2e-4, 0.005, true),
    row("lm-7.5b", "Adafactor", 1e-3, 0.001, 1e-4, 0.01, true),
];

pub fn preset(key: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.key == key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::rng::seeded;
    use crate::value::{Array, Tree};
    use alloc::vec;
    use rand::Rng;

    fn s(x: f64) -> TensorValue {
        TensorValue::Scalar(x)
    }

    #[test]
    fn adamw_first_step() {
        let hp = Hyperparams { lr: 0.001, ..Hyperparams::adamw() };
        let mut st = AdamWState::new(&s(0.0));
        let w = adamw_step(&s(0.0), &s(1.0), &mut st, &hp, 0.001);
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((w.as_scalar().unwrap() - expected).abs() < 1e-15);
        assert!((w.as_scalar().unwrap() + 0.000999999990).abs() < 1e-14);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adamw_zero_gradient_fixpoint() {
        let w = TensorValue::array(vec![0.3, -1.0]);
        let mut st = AdamWState::new(&w);
        let out = adamw_step(&w, &w.zeros_like(), &mut st, &Hyperparams::adamw(), 0.1);
        assert_eq!(out, w);
    }

    #[test]
    fn pure_decoupled_decay() {
        let hp = Hyperparams { lambda: 0.5, ..Hyperparams::adamw() };
        let w = TensorValue::array(vec![2.0, -4.0]);
        let mut st = AdamWState::new(&w);
        // m = v = 0 gives m_hat / (sqrt(v_hat) + eps) = 0.
        let out = adamw_step(&w, &w.zeros_like(), &mut st, &hp, 0.1);
        assert_eq!(out, w.map(|x| x - 0.1 * (0.5 * x)));
        assert_eq!(out, TensorValue::array(vec![2.0 * (1.0 - 0.05), -4.0 * (1.0 - 0.05)]));
    }

    #[test]
    fn lion_by_hand() {
        let mut st = MomentumState::new(&s(0.0));
        let w = lion_step(&s(0.0), &s(1.0), &mut st, &Hyperparams::lion(), 0.1);
        assert_eq!(w, s(-0.1));
        assert!((st.m.as_scalar().unwrap() - 0.01).abs() < 1e-17);
    }

    #[test]
    fn lion_zero_direction_only_decays() {
        let hp = Hyperparams { lambda: 0.3, ..Hyperparams::lion() };
        let mut st = MomentumState::new(&s(0.0));
        let w = lion_step(&s(2.0), &s(0.0), &mut st, &hp, 0.1);
        assert_eq!(w, s(2.0 - 0.1 * 0.3 * 2.0));
    }

    #[test]
    fn ablation_beta_zero_is_sign_sgd() {
        let g = TensorValue::array(vec![0.3, -2.0, 0.0]);
        let w = TensorValue::array(vec![1.0, 1.0, 1.0]);
        let mut st = MomentumState::new(&w);
        let out = ablation_step(&w, &g, &mut st, 0.0, 0.1, 0.0);
        assert_eq!(out, TensorValue::array(vec![0.9, 1.1, 1.0]));
    }

    #[test]
    fn ablation_no_gradient_decays() {
        let mut w = s(1.0);
        let mut st = MomentumState::new(&w);
        for _ in 0..5 {
            w = ablation_step(&w, &s(0.0), &mut st, 0.9, 0.1, 0.5);
        }
        assert!((w.as_scalar().unwrap() - libm::pow(0.95, 5.0)).abs() < 1e-15);
    }

    #[test]
    fn ablation_second_step_worked_example() {
        let lion = Hyperparams::lion();
        let mut sl = MomentumState::new(&s(0.0));
        let mut sa = MomentumState::new(&s(0.0));
        let _ = lion_update(&s(0.0), &s(1.0), &mut sl, &lion, 1.0);
        let _ = ablation_update(&s(0.0), &s(1.0), &mut sa, 0.9, 1.0, 0.0);
        let ul = lion_update(&s(0.0), &s(-1.0), &mut sl, &lion, 1.0);
        let ua = ablation_update(&s(0.0), &s(-1.0), &mut sa, 0.9, 1.0, 0.0);
        // c = 0.9 * 0.01 - 0.1 = -0.091; ablation m = 0.9 * 0.1 - 0.1 = -0.01.
        assert_eq!(ul, s(-1.0));
        assert_eq!(ua, s(-1.0));
        assert!((sa.m.as_scalar().unwrap() + 0.01).abs() < 1e-15);
    }

    /// Gradients `n` ones followed by a single -1.
    fn ones_then_flip(n: usize) -> impl Iterator<Item = f64> {
        core::iter::repeat_n(1.0, n).chain(core::iter::once(-1.0))
    }

    #[test]
    fn ablation_diverges_from_lion_once_momentum_builds() {
        // Oracle: both recurrences stepped by hand, lengthening the run of
        // ones until the final update signs disagree.
        let sgn = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
        let by_hand = |n: usize| {
            let (mut ml, mut ma, mut last) = (0.0f64, 0.0f64, (0.0, 0.0));
            for g in ones_then_flip(n) {
                let c = 0.9 * ml + 0.1 * g;
                ml = 0.99 * ml + 0.01 * g;
                ma = 0.9 * ma + 0.1 * g;
                last = (sgn(c), sgn(ma));
            }
            last
        };
        let expected = (1..50).find(|&n| by_hand(n).0 != by_hand(n).1).unwrap();

        let lion = Hyperparams::lion();
        let library = |n: usize| {
            let mut sl = MomentumState::new(&s(0.0));
            let mut sa = MomentumState::new(&s(0.0));
            let mut last = (s(0.0), s(0.0));
            for g in ones_then_flip(n) {
                last = (
                    lion_update(&s(0.0), &s(g), &mut sl, &lion, 1.0),
                    ablation_update(&s(0.0), &s(g), &mut sa, 0.9, 1.0, 0.0),
                );
            }
            last
        };
        // [1, -1] agrees; the first disagreement is found by both.
        assert_eq!(library(1).0, library(1).1);
        let found = (1..50).find(|&n| library(n).0 != library(n).1).unwrap();
        assert_eq!(found, expected);
        assert_eq!(found, 2);
    }

    #[test]
    fn buffer_counts() {
        let w = TensorValue::array(vec![1.0; 3]);
        assert_eq!(AdamWState::new(&w).buffer_count(), 2);
        assert_eq!(MomentumState::new(&w).buffer_count(), 1);
    }

    fn random_tree(rng: &mut crate::rng::Rng) -> TensorValue {
        let mut t = Tree::new();
        t.insert("a", TensorValue::Array(Array::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()));
        t.insert("b", TensorValue::array((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()));
        t.into()
    }

    #[test]
    fn program_rule_matches_reference_lion() {
        let mut rng = seeded(4, 0);
        let hp = Hyperparams { lambda: 0.1, lr: 1.0, ..Hyperparams::lion() };
        let mut w1 = random_tree(&mut rng);
        let mut w2 = w1.clone();
        let mut rule = ProgramRule::new(&assets::lion(0.9, 0.99, 0.1), &w1).unwrap();
        let mut st = MomentumState::new(&w1);
        for _ in 0..50 {
            let g = random_tree(&mut rng);
            let u = rule.update(&w1, &g, 0.01).unwrap();
            w1 = subtract(&w1, &u);
            w2 = lion_step(&w2, &g, &mut st, &hp, 0.01);
        }
        assert!(w1.bit_eq(&w2));
    }

    #[test]
    fn preset_rows() {
        let p = preset("vit-b16-imagenet-aug").unwrap();
        assert_eq!((p.lion.lr, p.lion.lambda, p.baseline.lr, p.baseline.lambda), (1e-4, 10.0, 1e-3, 1.0));
        let p = preset("diffusion").unwrap();
        assert_eq!((p.lion.lr, p.lion.lambda, p.baseline.lr, p.baseline.lambda), (3e-5, 0.1, 3e-4, 0.01));
        let p = preset("lm-7.5b").unwrap();
        assert_eq!((p.lion.lr, p.lion.lambda, p.baseline.lr, p.baseline.lambda), (1e-4, 0.01, 1e-3, 0.001));
        assert_eq!(p.baseline_name, "Adafactor");
        assert!(preset("coatnet-1").is_none());
        for p in PRESETS {
            p.baseline.validate().unwrap();
            p.lion.validate().unwrap();
        }
    }
}
