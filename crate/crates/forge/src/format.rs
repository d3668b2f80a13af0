//! Program and task files.
//!
//! Programs are read from the text grammar, or from JSON when the file name
//! ends in `.json`:
//!
//! ```json
//! {"statements": [{"out": "u", "fn": "mul", "args": [{"var": "g"}, {"const": 0.1}]}]}
//! ```

use std::fs;
use std::path::Path;

use optimforge_core::program::{Arg, Statement};
use optimforge_core::task::ProxyTask;
use optimforge_core::{assets, Function, Program};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramJson {
    pub statements: Vec<StatementJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementJson {
    pub out: String,
    #[serde(rename = "fn")]
    pub function: String,
    pub args: Vec<ArgJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgJson {
    Var(String),
    Const(f64),
}

/// Registry name, with words for the infix operators.
fn json_name(f: Function) -> &'static str {
    match f {
        Function::Add => "add",
        Function::Sub => "sub",
        Function::Mul => "mul",
        Function::Div => "div",
        f => f.name(),
    }
}

pub fn to_json(p: &Program) -> ProgramJson {
    ProgramJson {
        statements: p
            .statements
            .iter()
            .map(|s| StatementJson {
                out: s.out.clone(),
                function: json_name(s.function).to_string(),
                args: s
                    .args
                    .iter()
                    .map(|a| match a {
                        Arg::Var(n) => ArgJson::Var(n.clone()),
                        Arg::Const(c) => ArgJson::Const(*c),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn from_json(j: &ProgramJson) -> Result<Program, String> {
    let mut statements = Vec::with_capacity(j.statements.len());
    for (i, s) in j.statements.iter().enumerate() {
        let function = Function::from_name(&s.function).ok_or_else(|| format!("statement {i}: unknown function `{}`", s.function))?;
        if s.args.len() != function.arity() {
            return Err(format!(
                "statement {i}: `{}` takes {} arguments, got {}",
                s.function,
                function.arity(),
                s.args.len()
            ));
        }
        let args = s
            .args
            .iter()
            .map(|a| match a {
                ArgJson::Var(n) => Arg::Var(n.clone()),
                ArgJson::Const(c) => Arg::Const(*c),
            })
            .collect();
        statements.push(Statement::new(s.out.clone(), function, args));
    }
    let p = Program::new(statements);
    // The text grammar checks names and definitions; JSON strings are looser.
    match p.print().parse::<Program>() {
        Ok(q) if q == p => Ok(p),
        Ok(_) => Err("program does not survive the text grammar".into()),
        Err(e) => Err(format!("invalid program: {e}")),
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

/// A program from a file, or a shipped asset when `spec` names one.
pub fn load_program(spec: &str) -> Result<Program, FormatError> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(p) = assets::by_name(spec) {
            return Ok(p);
        }
    }
    let text = read(path)?;
    let invalid = |message: String| FormatError::Invalid { path: spec.to_string(), message };
    if path.extension().is_some_and(|e| e == "json") {
        let j: ProgramJson = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        from_json(&j).map_err(invalid)
    } else {
        text.parse().map_err(|e| invalid(format!("{e}")))
    }
}

/// A built-in task by id, or a task config file.
pub fn load_task(spec: &str) -> Result<ProxyTask, FormatError> {
    let path = Path::new(spec);
    let invalid = |message: String| FormatError::Invalid { path: spec.to_string(), message };
    let task = match ProxyTask::builtin(spec) {
        Some(t) if !path.exists() => t,
        _ => {
            let text = read(path)?;
            serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?
        }
    };
    task.validate().map_err(invalid)?;
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let p: Program = "def train(w, g, m, v, lr):\n  update = g * 0.5\n  return update, m, v\n".parse().unwrap();
        let text = serde_json::to_string(&to_json(&p)).unwrap();
        assert_eq!(text, r#"{"statements":[{"out":"update","fn":"mul","args":[{"var":"g"},{"const":0.5}]}]}"#);
    }

    #[test]
    fn json_round_trips_assets() {
        for (name, _) in assets::ALL {
            let p = load_program(name).unwrap();
            let text = serde_json::to_string(&to_json(&p)).unwrap();
            let back: ProgramJson = serde_json::from_str(&text).unwrap();
            assert_eq!(from_json(&back).unwrap(), p);
        }
    }

    #[test]
    fn json_rejects_bad_programs() {
        let bad = |s: &str| from_json(&serde_json::from_str(s).unwrap()).unwrap_err();
        assert!(bad(r#"{"statements":[{"out":"u","fn":"nope","args":[]}]}"#).contains("unknown function"));
        assert!(bad(r#"{"statements":[{"out":"u","fn":"mul","args":[{"var":"g"}]}]}"#).contains("arguments"));
        assert!(bad(r#"{"statements":[{"out":"a b","fn":"sin","args":[{"var":"g"}]}]}"#).contains("invalid program"));
    }

    #[test]
    fn builtin_tasks_load() {
        assert_eq!(load_task("linreg").unwrap(), ProxyTask::linreg());
        assert!(load_task("no-such-task").is_err());
    }

    proptest::proptest! {
        #[test]
        fn json_round_trips_random_programs(seed in proptest::prelude::any::<u64>(), len in 0usize..30) {
            use optimforge_core::program::{random_program, MutationConfig};
            let mut rng = optimforge_core::rng::seeded(seed, 0);
            let p = random_program(len, &MutationConfig::default(), &mut rng);
            proptest::prop_assume!(p.compile().is_ok());
            let text = serde_json::to_string(&to_json(&p)).unwrap();
            let back: ProgramJson = serde_json::from_str(&text).unwrap();
            proptest::prop_assert_eq!(from_json(&back).unwrap(), p);
        }
    }
}
