//! Abstract execution of programs.
//!
//! One walk over the statements replaces each value by three abstractions at
//! once: its kind and shape (to reject invalid programs before they run), a
//! digest of the computation that produced it (to deduplicate functionally
//! equal programs), and the set of statements it depends on (to find
//! redundant statements).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use siphasher::sip128::{Hasher128, SipHasher13};
use thiserror::Error;

use crate::program::{Arg, Program, INPUTS, RETURNS};
use crate::value::{TensorValue, ValueError};

/// Kind and shape of a value, without payload.
#[derive(Clone, PartialEq, Eq)]
pub enum AbstractValue {
    Scalar,
    Array(Vec<usize>),
    Tree(Arc<[(String, AbstractValue)]>),
}

impl fmt::Debug for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractValue::Scalar => f.write_str("scalar"),
            AbstractValue::Array(s) => write!(f, "array{s:?}"),
            AbstractValue::Tree(t) => f
                .debug_map()
                .entries(t.iter().map(|(k, v)| (k, v)))
                .finish(),
        }
    }
}

impl AbstractValue {
    pub fn of(v: &TensorValue) -> Self {
        match v {
            TensorValue::Scalar(_) => AbstractValue::Scalar,
            TensorValue::Array(a) => AbstractValue::Array(a.shape().to_vec()),
            TensorValue::Tree(t) => AbstractValue::Tree(
                t.entries()
                    .iter()
                    .map(|(k, v)| (k.clone(), AbstractValue::of(v)))
                    .collect(),
            ),
        }
    }

    /// Kind of an elementwise binary result; mirrors `TensorValue::zip_with`.
    pub fn combine(&self, other: &AbstractValue) -> Result<AbstractValue, ValueError> {
        use AbstractValue::*;
        match (self, other) {
            (Scalar, x) | (x, Scalar) => Ok(x.clone()),
            (Array(a), Array(b)) => {
                if a == b {
                    Ok(Array(a.clone()))
                } else {
                    Err(ValueError::ShapeMismatch {
                        left: a.clone(),
                        right: b.clone(),
                    })
                }
            }
            (Tree(a), Tree(b)) => {
                if Arc::ptr_eq(a, b) {
                    return Ok(Tree(a.clone()));
                }
                if a.len() != b.len() || a.iter().zip(b.iter()).any(|((x, _), (y, _))| x != y) {
                    return Err(ValueError::SchemaMismatch("tree keys differ".into()));
                }
                let mut same = true;
                let mut leaves = Vec::with_capacity(a.len());
                for ((k, x), (_, y)) in a.iter().zip(b.iter()) {
                    let leaf = x.combine(y)?;
                    same &= &leaf == x;
                    leaves.push((k.clone(), leaf));
                }
                Ok(if same { Tree(a.clone()) } else { Tree(leaves.into()) })
            }
            (Array(_), Tree(_)) | (Tree(_), Array(_)) => Err(ValueError::SchemaMismatch(
                "array combined with tree".into(),
            )),
        }
    }

    /// Kind of `norm`: trees keep their keys with scalar leaves.
    pub fn leaves_to_scalars(&self) -> AbstractValue {
        match self {
            AbstractValue::Tree(t) => AbstractValue::Tree(
                t.iter()
                    .map(|(k, _)| (k.clone(), AbstractValue::Scalar))
                    .collect(),
            ),
            _ => AbstractValue::Scalar,
        }
    }
}

/// Kinds of the five inputs: `g`, `m`, `v` share the kind of `w`; `lr` is a scalar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub weights: AbstractValue,
}

impl Signature {
    pub fn new(weights: AbstractValue) -> Self {
        Self { weights }
    }

    pub fn scalar() -> Self {
        Self::new(AbstractValue::Scalar)
    }

    pub fn array(shape: &[usize]) -> Self {
        Self::new(AbstractValue::Array(shape.to_vec()))
    }

    pub fn of(weights: &TensorValue) -> Self {
        Self::new(AbstractValue::of(weights))
    }

    fn input_kind(&self, index: usize) -> AbstractValue {
        if INPUTS[index] == "lr" {
            AbstractValue::Scalar
        } else {
            self.weights.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Statement(usize),
    Returns,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Statement(i) => write!(f, "statement {i}"),
            Location::Returns => f.write_str("returns"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeErrorReason {
    #[error("undefined variable `{0}`")]
    Undefined(String),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("`{name}` has kind {got:?}, expected {expected:?}")]
    ReturnKind {
        name: &'static str,
        expected: AbstractValue,
        got: AbstractValue,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {reason}")]
pub struct TypeError {
    pub location: Location,
    pub reason: TypeErrorReason,
}

/// 128-bit functional digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HashValue(pub u128);

impl HashValue {
    pub fn to_hex(self) -> String {
        alloc::format!("{:032x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 {
            return None;
        }
        u128::from_str_radix(s, 16).ok().map(HashValue)
    }

    /// Low 64 bits, for seeding.
    pub fn low64(self) -> u64 {
        self.0 as u64
    }
}

impl serde::Serialize for HashValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for HashValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <String as serde::Deserialize>::deserialize(d)?;
        HashValue::from_hex(&text).ok_or_else(|| serde::de::Error::custom("expected 32 hex digits"))
    }
}

impl fmt::Debug for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Display for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Statement indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DepSet(BTreeSet<usize>);

impl DepSet {
    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    fn union_with(&mut self, other: &DepSet) {
        self.0.extend(other.0.iter().copied());
    }
}

impl FromIterator<usize> for DepSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        DepSet(iter.into_iter().collect())
    }
}

// Digest key, versioned: changing it invalidates every logged hash.
const HASH_KEY: (u64, u64) = (0x6f70_7469_6d66_6f72, 0x6765_2d68_6173_6831);

#[derive(Clone, Copy)]
struct Digest(u128);

fn digest(tag: u8, parts: &[u128], extra: &[u8]) -> Digest {
    let mut h = SipHasher13::new_with_keys(HASH_KEY.0, HASH_KEY.1);
    h.write_u8(tag);
    h.write_u64(parts.len() as u64);
    for p in parts {
        h.write(&p.to_le_bytes());
    }
    h.write(extra);
    Digest(h.finish128().as_u128())
}

const TAG_INPUT: u8 = 1;
const TAG_CONST: u8 = 2;
const TAG_CALL: u8 = 3;
const TAG_PROGRAM: u8 = 4;
const TAG_UNDEFINED: u8 = 5;

fn input_digest(name: &str) -> Digest {
    digest(TAG_INPUT, &[], name.as_bytes())
}

#[derive(Clone)]
struct Var<'a> {
    name: &'a str,
    kind: Option<AbstractValue>,
    hash: Digest,
    raw_hash: Digest,
    deps: DepSet,
}

/// Everything abstract execution learns about a valid program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    /// Kinds of `update`, `m`, `v`.
    pub outputs: [AbstractValue; 3],
    /// Functional digest with commutative arguments sorted.
    pub hash: HashValue,
    /// Functional digest without commutative canonicalization.
    pub raw_hash: HashValue,
    /// Statements the returns depend on.
    pub live: DepSet,
}

struct Walk<'a> {
    vars: Vec<Var<'a>>,
}

impl<'a> Walk<'a> {
    fn find(&self, name: &str) -> Option<&Var<'a>> {
        self.vars.iter().find(|v| v.name == name)
    }

    fn set(&mut self, var: Var<'a>) {
        match self.vars.iter_mut().find(|v| v.name == var.name) {
            Some(slot) => *slot = var,
            None => self.vars.push(var),
        }
    }
}

/// Walks the program. With `sig = None` only digests and dependencies are
/// computed and kind errors are ignored.
fn walk<'a>(p: &'a Program, sig: Option<&Signature>) -> Result<(Walk<'a>, [Option<Var<'a>>; 3]), TypeError> {
    let mut w = Walk { vars: Vec::new() };
    for (i, name) in INPUTS.iter().enumerate() {
        let d = input_digest(name);
        w.vars.push(Var {
            name,
            kind: sig.map(|s| s.input_kind(i)),
            hash: d,
            raw_hash: d,
            deps: DepSet::default(),
        });
    }
    let undefined = |name: &str| digest(TAG_UNDEFINED, &[], name.as_bytes());
    for (i, s) in p.statements.iter().enumerate() {
        let err = |reason| TypeError {
            location: Location::Statement(i),
            reason,
        };
        let mut kinds: Vec<AbstractValue> = Vec::with_capacity(s.args.len());
        let mut hashes: Vec<u128> = Vec::with_capacity(s.args.len());
        let mut raw: Vec<u128> = Vec::with_capacity(s.args.len());
        let mut deps = DepSet::default();
        deps.0.insert(i);
        for a in &s.args {
            match a {
                Arg::Const(c) => {
                    let d = digest(TAG_CONST, &[], &c.to_bits().to_le_bytes());
                    kinds.push(AbstractValue::Scalar);
                    hashes.push(d.0);
                    raw.push(d.0);
                }
                Arg::Var(n) => match w.find(n) {
                    Some(v) => {
                        if let Some(k) = &v.kind {
                            kinds.push(k.clone());
                        }
                        hashes.push(v.hash.0);
                        raw.push(v.raw_hash.0);
                        deps.union_with(&v.deps);
                    }
                    None => {
                        if sig.is_some() {
                            return Err(err(TypeErrorReason::Undefined(n.clone())));
                        }
                        let d = undefined(n);
                        hashes.push(d.0);
                        raw.push(d.0);
                    }
                },
            }
        }
        let kind = match sig {
            Some(_) => {
                let refs: Vec<&AbstractValue> = kinds.iter().collect();
                Some(
                    s.function
                        .output_kind(&refs)
                        .map_err(|e| err(TypeErrorReason::Value(e)))?,
                )
            }
            None => None,
        };
        if s.function.is_commutative() {
            hashes.sort_unstable();
        }
        let fid = [s.function.id()];
        w.set(Var {
            name: &s.out,
            kind,
            hash: digest(TAG_CALL, &hashes, &fid),
            raw_hash: digest(TAG_CALL, &raw, &fid),
            deps,
        });
    }
    let returns = RETURNS.map(|r| w.find(r).cloned());
    Ok((w, returns))
}

/// Type/shape inference, functional hashing and liveness in one pass.
pub fn analyze(p: &Program, sig: &Signature) -> Result<Analysis, TypeError> {
    let (_, returns) = walk(p, Some(sig))?;
    let mut outputs: Vec<AbstractValue> = Vec::with_capacity(3);
    let mut live = DepSet::default();
    let mut hashes = [0u128; 3];
    let mut raw = [0u128; 3];
    for (i, (name, var)) in RETURNS.iter().zip(returns.iter()).enumerate() {
        let var = var.as_ref().ok_or(TypeError {
            location: Location::Returns,
            reason: TypeErrorReason::Undefined(String::from(*name)),
        })?;
        let kind = var.kind.clone().expect("kinds computed with a signature");
        // State must keep the kind of w so the next step sees the same signature.
        if kind != sig.weights {
            return Err(TypeError {
                location: Location::Returns,
                reason: TypeErrorReason::ReturnKind {
                    name,
                    expected: sig.weights.clone(),
                    got: kind,
                },
            });
        }
        outputs.push(kind);
        live.union_with(&var.deps);
        hashes[i] = var.hash.0;
        raw[i] = var.raw_hash.0;
    }
    Ok(Analysis {
        outputs: outputs.try_into().expect("three returns"),
        hash: HashValue(digest(TAG_PROGRAM, &hashes, &[]).0),
        raw_hash: HashValue(digest(TAG_PROGRAM, &raw, &[]).0),
        live,
    })
}

/// Validates `p` against `sig`, returning the kinds of `update`, `m`, `v`.
pub fn infer(p: &Program, sig: &Signature) -> Result<[AbstractValue; 3], TypeError> {
    analyze(p, sig).map(|a| a.outputs)
}

fn returns_of(p: &Program) -> [Option<Var<'_>>; 3] {
    walk(p, None).expect("kind-free walk cannot fail").1
}

/// Digest of the computation from inputs to `(update, m, v)`, invariant to
/// variable names, dead statements and the order of commutative arguments.
/// Meaningful for programs that pass [`infer`].
pub fn functional_hash(p: &Program) -> HashValue {
    let hashes = returns_of(p).map(|v| v.map_or(input_digest("?").0, |v| v.hash.0));
    HashValue(digest(TAG_PROGRAM, &hashes, &[]).0)
}

/// Statements any return value depends on.
pub fn live_statements(p: &Program) -> DepSet {
    let mut live = DepSet::default();
    for v in returns_of(p).iter().flatten() {
        live.union_with(&v.deps);
    }
    live
}

/// `p` restricted to its live statements, order preserved.
pub fn strip_redundant(p: &Program) -> Program {
    let live = live_statements(p);
    Program::new(
        p.statements
            .iter()
            .enumerate()
            .filter(|(i, _)| live.contains(*i))
            .map(|(_, s)| s.clone())
            .collect(),
    )
}
