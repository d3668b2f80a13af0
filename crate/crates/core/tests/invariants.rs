use optimforge_core::analysis::{analyze, functional_hash, live_statements, strip_redundant, Signature};
use optimforge_core::evolution::{ChildRecord, Individual, Search, SearchConfig};
use optimforge_core::optim::{adamw_update, lion_update, AdamWState, Hyperparams, MomentumState};
use optimforge_core::program::{mutate, random_program, Inputs, MutationConfig};
use optimforge_core::rng::seeded;
use optimforge_core::simplify::canonicalize;
use optimforge_core::task::{DatasetSpec, Fitness, ProxyTask, Sequential};
use optimforge_core::{assets, Program, TensorValue};
use proptest::prelude::*;
use rand::Rng;

fn valid_program(seed: u64, sig: &Signature) -> Program {
    let mut rng = seeded(seed, 0);
    let cfg = MutationConfig::default();
    loop {
        let len = rng.random_range(1..=16);
        let p = random_program(len, &cfg, &mut rng);
        if analyze(&p, sig).is_ok() {
            return p;
        }
    }
}

fn inputs(seed: u64) -> Inputs {
    let mut rng = seeded(seed, 1);
    let mut arr = || TensorValue::array((0..4).map(|_| rng.random_range(-2.0..2.0)).collect());
    let (w, g, m, v) = (arr(), arr(), arr(), arr());
    Inputs { w, g, m, v, lr: 0.01 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn strip_keeps_outputs_and_hash(seed in any::<u64>()) {
        let sig = Signature::array(&[4]);
        let p = valid_program(seed, &sig);
        let s = strip_redundant(&p);
        prop_assert_eq!(functional_hash(&s), functional_hash(&p));
        prop_assert_eq!(live_statements(&s).len(), s.len());
        let (a, b) = (p.execute(inputs(seed)).unwrap(), s.execute(inputs(seed)).unwrap());
        prop_assert!(a.update.bit_eq(&b.update) && a.m.bit_eq(&b.m) && a.v.bit_eq(&b.v));
    }

    #[test]
    fn canonical_form_is_a_fixed_point(seed in any::<u64>()) {
        let sig = Signature::array(&[4]);
        let p = valid_program(seed, &sig);
        let c = canonicalize(&p);
        prop_assert_eq!(canonicalize(&c), c.clone());
        prop_assert_eq!(functional_hash(&c), functional_hash(&p));
        prop_assert!(analyze(&c, &sig).is_ok());
    }

    #[test]
    fn mutants_of_valid_programs_stay_within_the_cap(seed in any::<u64>()) {
        let cfg = MutationConfig { max_statements: 12, ..MutationConfig::default() };
        let mut rng = seeded(seed, 2);
        let mut p = assets::adamw();
        for _ in 0..50 {
            if let Some(q) = mutate(&p, &cfg, &mut rng) {
                prop_assert!(q.len() <= 12);
                p = q;
            }
        }
    }

    #[test]
    fn lion_updates_are_signs(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, lr in 1e-8f64..10.0, seed in any::<u64>()) {
        let hp = Hyperparams { beta1: b1, beta2: b2, eps: 0.0, lambda: 0.0, lr: 1.0 };
        let w = inputs(seed).w;
        let mut state = MomentumState { m: inputs(seed ^ 1).m };
        let u = lion_update(&w, &inputs(seed).g, &mut state, &hp, lr);
        prop_assert!(u.flatten().iter().all(|x| *x == 0.0 || x.abs() == lr));
    }

    #[test]
    fn decoupled_decay_is_lr_lambda_w(lambda in 0.0f64..10.0, lr in 1e-6f64..1.0, seed in any::<u64>()) {
        let w = inputs(seed).w;
        let g = w.zeros_like();
        let expected = w.map(|x| lr * (lambda * x));
        let hp = Hyperparams { lambda, lr: 1.0, ..Hyperparams::adamw() };
        let a = adamw_update(&w, &g, &mut AdamWState::new(&w), &hp, lr);
        let l = lion_update(&w, &g, &mut MomentumState::new(&w), &Hyperparams { lambda, ..Hyperparams::lion() }, lr);
        prop_assert!(a.bit_eq(&expected));
        prop_assert!(l.bit_eq(&expected));
    }

    #[test]
    fn failures_rank_below_every_success(x in proptest::num::f64::NORMAL) {
        prop_assert!(Fitness::nonfinite().total_cmp(&Fitness::ok(x)).is_lt());
        prop_assert!(Fitness::timeout().total_cmp(&Fitness::ok(x)).is_lt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn search_invariants_hold_every_cycle(seed in any::<u64>(), population in 3usize..30, batch in 1usize..5) {
        let task = ProxyTask {
            dataset: DatasetSpec::Linreg { dim: 3, train: 32, val: 32, noise: 0.1, seed: 2 },
            steps: 10,
            batch_size: 4,
            ..ProxyTask::linreg()
        }
        .prepare();
        let cfg = SearchConfig { population, budget: 60, seed, batch, ..SearchConfig::default() };
        let search = Search::new(&cfg, &task, &Sequential).unwrap();
        let mut state = search.init(&assets::adamw()).unwrap();
        let mut records = 0;
        while !state.finished(&cfg) {
            let oldest = state.population.iter().map(|i| i.birth).min().unwrap();
            let best = state.best.fitness;
            let before = state.counters.children;
            search.step(&mut state, &mut |_: &ChildRecord, _: &Individual| records += 1);
            let added = state.counters.children - before;
            prop_assert_eq!(state.population.len(), population);
            prop_assert!(added == 0 || state.population.iter().all(|i| i.birth != oldest));
            prop_assert_eq!(state.counters.evaluations, state.cache.len() as u64);
            prop_assert!(state.best.fitness.total_cmp(&best).is_ge());
        }
        prop_assert_eq!(records, 60);
    }
}
