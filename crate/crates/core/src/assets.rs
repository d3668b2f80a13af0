//! Reference programs shipped with the crate.

use alloc::format;

use crate::program::Program;

pub const ADAMW_TEXT: &str = include_str!("../programs/adamw.prog");
pub const LION_TEXT: &str = include_str!("../programs/lion.prog");
pub const DISCOVERED_TEXT: &str = include_str!("../programs/discovered.prog");
pub const RAW_LION_TEXT: &str = include_str!("../programs/raw_lion.prog");
pub const BETTER_REGULARIZATION_TEXT: &str = include_str!("../programs/better_regularization.prog");
pub const ADAGRAD_LIKE_TEXT: &str = include_str!("../programs/adagrad_like.prog");
pub const ADABELIEF_LIKE_TEXT: &str = include_str!("../programs/adabelief_like.prog");

/// `(name, text)` for every shipped program.
pub const ALL: [(&str, &str); 7] = [
    ("adamw", ADAMW_TEXT),
    ("lion", LION_TEXT),
    ("discovered", DISCOVERED_TEXT),
    ("raw_lion", RAW_LION_TEXT),
    ("better_regularization", BETTER_REGULARIZATION_TEXT),
    ("adagrad_like", ADAGRAD_LIKE_TEXT),
    ("adabelief_like", ADABELIEF_LIKE_TEXT),
];

fn load(text: &str) -> Program {
    text.parse().expect("shipped program parses")
}

pub fn by_name(name: &str) -> Option<Program> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| load(t))
}

pub fn adamw() -> Program {
    load(ADAMW_TEXT)
}

/// Lion with the given interpolation factors and decoupled decay strength.
pub fn lion(beta1: f64, beta2: f64, lambda: f64) -> Program {
    load(&format!(
        "def train(w, g, m, v, lr):
  update = interp(g, m, {beta1:?})
  update = sign(update)
  m = interp(g, m, {beta2:?})
  wd = w * {lambda:?}
  update = update + wd
  update = update * lr
  return update, m, v
"
    ))
}

pub fn discovered() -> Program {
    load(DISCOVERED_TEXT)
}

pub fn raw_lion() -> Program {
    load(RAW_LION_TEXT)
}

pub fn better_regularization() -> Program {
    load(BETTER_REGULARIZATION_TEXT)
}

pub fn adagrad_like() -> Program {
    load(ADAGRAD_LIKE_TEXT)
}

pub fn adabelief_like() -> Program {
    load(ADABELIEF_LIKE_TEXT)
}

/// The ablation optimizer: one EMA used both for the update and as state.
pub fn ablation(beta: f64, lambda: f64) -> Program {
    load(&format!(
        "def train(w, g, m, v, lr):
  m = interp(g, m, {beta:?})
  update = sign(m)
  wd = w * {lambda:?}
  update = update + wd
  update = update * lr
  return update, m, v
"
    ))
}
