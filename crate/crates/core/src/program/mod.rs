//! Straight-line optimizer programs and their interpreter.
//!
//! A program is the body of `def train(w, g, m, v, lr)`: a list of
//! assignments `out = f(args..)` followed by `return update, m, v`. Variables
//! may be reassigned; reads see the latest assignment above them.

mod mutate;
mod space;
mod text;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::function::Function;
use crate::value::{TensorValue, ValueError};

pub use mutate::{mutate, random_program, MutationConfig, MutationKind};
pub use space::estimate_space;
pub use text::{parse, ParseError};

/// Input names, in call order.
pub const INPUTS: [&str; 5] = ["w", "g", "m", "v", "lr"];
/// Returned names, in order.
pub const RETURNS: [&str; 3] = ["update", "m", "v"];
/// Default statement cap.
pub const DEFAULT_MAX_STATEMENTS: usize = 64;

#[derive(Debug, Clone)]
pub enum Arg {
    Var(String),
    Const(f64),
}

impl PartialEq for Arg {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Arg::Var(a), Arg::Var(b)) => a == b,
            (Arg::Const(a), Arg::Const(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Arg {}

impl Arg {
    pub fn var(name: impl Into<String>) -> Self {
        Arg::Var(name.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub out: String,
    pub function: Function,
    pub args: Vec<Arg>,
}

impl Statement {
    pub fn new(out: impl Into<String>, function: Function, args: Vec<Arg>) -> Self {
        Self {
            out: out.into(),
            function,
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub statements: Vec<Statement>,
}

/// The five inputs of `train`.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub w: TensorValue,
    pub g: TensorValue,
    pub m: TensorValue,
    pub v: TensorValue,
    pub lr: f64,
}

/// The three outputs of `train`.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub update: TensorValue,
    pub m: TensorValue,
    pub v: TensorValue,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("statement {statement}: undefined variable `{name}`")]
    UndefinedVariable { statement: usize, name: String },
    #[error("return value `{0}` is undefined")]
    UndefinedReturn(&'static str),
    #[error("statement {statement}: {source}")]
    Value {
        statement: usize,
        #[source]
        source: ValueError,
    },
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    Const(f64),
}

/// A program with variable names resolved to slots.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<(Function, Vec<Slot>, usize)>,
    slots: usize,
    returns: [usize; 3],
}

impl Program {
    pub fn new(statements: Vec<Statement>) -> Self {
        Self { statements }
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Names readable just before statement `index`: inputs plus every
    /// output assigned earlier, deduplicated, in first-definition order.
    pub fn visible_names(&self, index: usize) -> Vec<&str> {
        let mut names: Vec<&str> = INPUTS.to_vec();
        for s in &self.statements[..index.min(self.statements.len())] {
            if !names.contains(&s.out.as_str()) {
                names.push(&s.out);
            }
        }
        names
    }

    /// Every distinct name the program mentions, inputs first.
    pub fn all_names(&self) -> Vec<&str> {
        let mut names = self.visible_names(self.statements.len());
        for s in &self.statements {
            for a in &s.args {
                if let Arg::Var(n) = a {
                    if !names.contains(&n.as_str()) {
                        names.push(n);
                    }
                }
            }
        }
        names
    }

    /// Resolves names to slots; fails on reads of undefined variables.
    pub fn compile(&self) -> Result<Compiled, ExecError> {
        let mut names: Vec<&str> = INPUTS.to_vec();
        let mut current: Vec<usize> = (0..INPUTS.len()).collect();
        let mut ops = Vec::with_capacity(self.statements.len());
        let lookup = |names: &Vec<&str>, current: &Vec<usize>, n: &str| {
            names.iter().position(|&x| x == n).map(|i| current[i])
        };
        let mut slots = INPUTS.len();
        for (i, s) in self.statements.iter().enumerate() {
            let mut args = Vec::with_capacity(s.args.len());
            for a in &s.args {
                args.push(match a {
                    Arg::Const(c) => Slot::Const(*c),
                    Arg::Var(n) => Slot::Var(lookup(&names, &current, n).ok_or_else(|| {
                        ExecError::UndefinedVariable {
                            statement: i,
                            name: n.clone(),
                        }
                    })?),
                });
            }
            // Every assignment gets a fresh slot so reads stay valid SSA.
            let out = slots;
            slots += 1;
            match names.iter().position(|&x| x == s.out) {
                Some(j) => current[j] = out,
                None => {
                    names.push(&s.out);
                    current.push(out);
                }
            }
            ops.push((s.function, args, out));
        }
        let mut returns = [0; 3];
        for (r, name) in returns.iter_mut().zip(RETURNS) {
            *r = lookup(&names, &current, name).ok_or(ExecError::UndefinedReturn(name))?;
        }
        Ok(Compiled {
            ops,
            slots,
            returns,
        })
    }

    /// Runs the program once.
    pub fn execute(&self, inputs: Inputs) -> Result<Outputs, ExecError> {
        self.compile()?.execute(inputs)
    }

    /// Canonical text form.
    pub fn print(&self) -> String {
        text::print(self)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}

impl core::str::FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Serialized as its canonical text.
impl serde::Serialize for Program {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.print())
    }
}

impl<'de> serde::Deserialize<'de> for Program {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <String as serde::Deserialize>::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

impl Compiled {
    pub fn execute(&self, inputs: Inputs) -> Result<Outputs, ExecError> {
        let mut env: Vec<Option<TensorValue>> = Vec::with_capacity(self.slots);
        env.push(Some(inputs.w));
        env.push(Some(inputs.g));
        env.push(Some(inputs.m));
        env.push(Some(inputs.v));
        env.push(Some(TensorValue::Scalar(inputs.lr)));
        env.resize(self.slots, None);
        let mut consts: Vec<TensorValue> = Vec::with_capacity(3);
        for (i, (function, args, out)) in self.ops.iter().enumerate() {
            consts.clear();
            for a in args {
                if let Slot::Const(c) = a {
                    consts.push(TensorValue::Scalar(*c));
                }
            }
            let mut next_const = consts.iter();
            let refs: Vec<&TensorValue> = args
                .iter()
                .map(|a| match a {
                    Slot::Var(s) => env[*s].as_ref().expect("slot assigned before use"),
                    Slot::Const(_) => next_const.next().expect("constant materialized"),
                })
                .collect();
            let value = function
                .apply(&refs)
                .map_err(|source| ExecError::Value {
                    statement: i,
                    source,
                })?;
            env[*out] = Some(value);
        }
        // Distinct names never share a slot, so each return can be moved out.
        let mut take = |slot: usize| env[slot].take().expect("assigned");
        let update = take(self.returns[0]);
        let m = take(self.returns[1]);
        let v = take(self.returns[2]);
        Ok(Outputs { update, m, v })
    }
}
