//! Evolutionary discovery of gradient-based optimizers.
//!
//! Optimizers are straight-line programs `train(w, g, m, v, lr) -> (update, m, v)`
//! over scalars, arrays and named trees of arrays. This crate holds the
//! allocation-only core: the value model and function library, the program IR
//! with its interpreter and mutation operators, abstract execution (shape
//! inference, functional hashing, liveness), the reference optimizers, the
//! desk-scale proxy tasks, regularized evolution, and program simplification.
//!
//! File formats, run directories, parallel evaluation and the command line
//! live in the `optimforge` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod assets;
pub mod evolution;
pub mod function;
pub mod optim;
pub mod program;
pub mod rng;
pub mod simplify;
pub mod task;
pub mod value;

pub use analysis::{
    analyze, functional_hash, infer, live_statements, strip_redundant, AbstractValue, Analysis,
    DepSet, HashValue, Signature, TypeError,
};
pub use function::Function;
pub use program::{Arg, Program, Statement};
pub use task::{Fitness, FitnessStatus, ProxyTask};
pub use value::{Array, TensorValue, Tree, ValueError};
