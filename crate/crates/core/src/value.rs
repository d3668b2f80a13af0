//! Runtime values: scalars, dense row-major arrays, and ordered trees of them.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Errors raised when values of incompatible kinds meet in a function call.
///
/// Numeric domain problems (log of a negative, 0/0) are not errors: they
/// produce NaN.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{function} takes {expected} argument(s), got {got}")]
    ArityError {
        function: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("argument {position} of {function} must be a scalar")]
    ScalarRequired {
        function: &'static str,
        position: usize,
    },
    #[error("invalid array: {0}")]
    InvalidArray(String),
}

/// Dense array with a non-empty shape of positive dimensions.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ValueError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(ValueError::InvalidArray(alloc::format!(
                "shape {shape:?} must have positive dims"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(ValueError::InvalidArray(alloc::format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "array must have at least one element");
        Self {
            shape: alloc::vec![data.len()],
            data,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self::new(shape, alloc::vec![value; len]).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}{:?}", self.shape, self.data)
    }
}

/// Ordered map from names to scalar or array leaves.
///
/// Keys are unique and iterate in insertion order.
#[derive(Clone, PartialEq, Default)]
pub struct Tree {
    entries: Vec<(String, TensorValue)>,
}

impl Tree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a leaf. Panics on duplicate keys or nested trees.
    pub fn insert(&mut self, key: impl Into<String>, leaf: TensorValue) {
        let key = key.into();
        assert!(
            !matches!(leaf, TensorValue::Tree(_)),
            "tree leaves must be scalars or arrays"
        );
        assert!(self.get(&key).is_none(), "duplicate tree key {key}");
        self.entries.push((key, leaf));
    }

    pub fn with(mut self, key: impl Into<String>, leaf: TensorValue) -> Self {
        self.insert(key, leaf);
        self
    }

    pub fn get(&self, key: &str) -> Option<&TensorValue> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut TensorValue> {
        self.entries
            .iter_mut()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    pub fn entries(&self) -> &[(String, TensorValue)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn same_keys(&self, other: &Tree) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, _), (b, _))| a == b)
    }
}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, v)| (k, v)))
            .finish()
    }
}

/// The interpreter's universe.
#[derive(Clone, PartialEq)]
pub enum TensorValue {
    Scalar(f64),
    Array(Array),
    Tree(Tree),
}

impl fmt::Debug for TensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorValue::Scalar(x) => write!(f, "{x:?}"),
            TensorValue::Array(a) => a.fmt(f),
            TensorValue::Tree(t) => t.fmt(f),
        }
    }
}

impl From<f64> for TensorValue {
    fn from(x: f64) -> Self {
        TensorValue::Scalar(x)
    }
}

impl From<Array> for TensorValue {
    fn from(a: Array) -> Self {
        TensorValue::Array(a)
    }
}

impl From<Tree> for TensorValue {
    fn from(t: Tree) -> Self {
        TensorValue::Tree(t)
    }
}

impl TensorValue {
    pub fn array(data: Vec<f64>) -> Self {
        TensorValue::Array(Array::from_vec(data))
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            TensorValue::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&Array> {
        match self {
            TensorValue::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_tree(&self) -> Option<&Tree> {
        match self {
            TensorValue::Tree(t) => Some(t),
            _ => None,
        }
    }

    /// Same kind and shape, every element replaced by `value`.
    pub fn full_like(&self, value: f64) -> Self {
        self.map(|_| value)
    }

    pub fn zeros_like(&self) -> Self {
        self.full_like(0.0)
    }

    /// Number of scalar elements.
    pub fn numel(&self) -> usize {
        match self {
            TensorValue::Scalar(_) => 1,
            TensorValue::Array(a) => a.len(),
            TensorValue::Tree(t) => t.entries.iter().map(|(_, v)| v.numel()).sum(),
        }
    }

    /// Visits every element in canonical order: tree insertion order, arrays row-major.
    pub fn for_each(&self, f: &mut impl FnMut(f64)) {
        match self {
            TensorValue::Scalar(x) => f(*x),
            TensorValue::Array(a) => a.data.iter().for_each(|&x| f(x)),
            TensorValue::Tree(t) => t.entries.iter().for_each(|(_, v)| v.for_each(f)),
        }
    }

    /// Elements flattened in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        self.for_each(&mut |x| out.push(x));
        out
    }

    /// Mutable visit in canonical order.
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        match self {
            TensorValue::Scalar(x) => f(x),
            TensorValue::Array(a) => a.data.iter_mut().for_each(f),
            TensorValue::Tree(t) => t.entries.iter_mut().for_each(|(_, v)| v.for_each_mut(f)),
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |x| ok &= x.is_finite());
        ok
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        match self {
            TensorValue::Scalar(x) => TensorValue::Scalar(f(*x)),
            TensorValue::Array(a) => TensorValue::Array(a.map(f)),
            TensorValue::Tree(t) => TensorValue::Tree(Tree {
                entries: t
                    .entries
                    .iter()
                    .map(|(k, v)| (k.clone(), v.map(f)))
                    .collect(),
            }),
        }
    }

    /// Elementwise binary combination under the casting rule: a scalar
    /// broadcasts to anything, arrays need equal shapes, trees need equal
    /// key lists (leaves combine by the same rule), array with tree fails.
    pub fn zip_with(
        &self,
        other: &TensorValue,
        f: impl Fn(f64, f64) -> f64 + Copy,
    ) -> Result<TensorValue, ValueError> {
        use TensorValue::*;
        Ok(match (self, other) {
            (Scalar(a), Scalar(b)) => Scalar(f(*a, *b)),
            (Scalar(a), y) => y.map(|b| f(*a, b)),
            (x, Scalar(b)) => x.map(|a| f(a, *b)),
            (Array(x), Array(y)) => {
                if x.shape != y.shape {
                    return Err(ValueError::ShapeMismatch {
                        left: x.shape.clone(),
                        right: y.shape.clone(),
                    });
                }
                Array(self::Array {
                    shape: x.shape.clone(),
                    data: x.data.iter().zip(&y.data).map(|(&a, &b)| f(a, b)).collect(),
                })
            }
            (Tree(x), Tree(y)) => {
                if !x.same_keys(y) {
                    return Err(schema_mismatch(x, y));
                }
                let mut entries = Vec::with_capacity(x.entries.len());
                for ((k, a), (_, b)) in x.entries.iter().zip(&y.entries) {
                    entries.push((k.clone(), a.zip_with(b, f)?));
                }
                Tree(self::Tree { entries })
            }
            (Array(_), Tree(_)) | (Tree(_), Array(_)) => {
                return Err(ValueError::SchemaMismatch(
                    "array combined with tree".into(),
                ))
            }
        })
    }

    /// Folds `f` over element pairs after broadcasting, in canonical order.
    pub fn zip_fold(
        &self,
        other: &TensorValue,
        init: f64,
        f: impl Fn(f64, f64, f64) -> f64 + Copy,
    ) -> Result<f64, ValueError> {
        use TensorValue::*;
        Ok(match (self, other) {
            (Scalar(a), Scalar(b)) => f(init, *a, *b),
            (Scalar(a), y) => {
                let mut acc = init;
                y.for_each(&mut |b| acc = f(acc, *a, b));
                acc
            }
            (x, Scalar(b)) => {
                let mut acc = init;
                x.for_each(&mut |a| acc = f(acc, a, *b));
                acc
            }
            (Array(x), Array(y)) => {
                if x.shape != y.shape {
                    return Err(ValueError::ShapeMismatch {
                        left: x.shape.clone(),
                        right: y.shape.clone(),
                    });
                }
                x.data
                    .iter()
                    .zip(&y.data)
                    .fold(init, |acc, (&a, &b)| f(acc, a, b))
            }
            (Tree(x), Tree(y)) => {
                if !x.same_keys(y) {
                    return Err(schema_mismatch(x, y));
                }
                let mut acc = init;
                for ((_, a), (_, b)) in x.entries.iter().zip(&y.entries) {
                    acc = a.zip_fold(b, acc, f)?;
                }
                acc
            }
            (Array(_), Tree(_)) | (Tree(_), Array(_)) => {
                return Err(ValueError::SchemaMismatch(
                    "array combined with tree".into(),
                ))
            }
        })
    }

    /// Replaces every leaf of a tree (or the value itself) by `f(leaf)`.
    pub(crate) fn map_leaves(&self, f: impl Fn(&TensorValue) -> TensorValue) -> TensorValue {
        match self {
            TensorValue::Tree(t) => TensorValue::Tree(Tree {
                entries: t.entries.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
            }),
            leaf => f(leaf),
        }
    }

    /// Sum of squares in canonical order.
    pub fn sum_squares(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each(&mut |x| acc += x * x);
        acc
    }

    /// Euclidean norm over all elements.
    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.sum_squares())
    }

    /// Bitwise equality, treating each f64 by its bit pattern.
    pub fn bit_eq(&self, other: &TensorValue) -> bool {
        let a = self.flatten();
        let b = other.flatten();
        self.same_structure(other)
            && a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// Same kind, shapes and keys (payload ignored).
    pub fn same_structure(&self, other: &TensorValue) -> bool {
        use TensorValue::*;
        match (self, other) {
            (Scalar(_), Scalar(_)) => true,
            (Array(a), Array(b)) => a.shape == b.shape,
            (Tree(a), Tree(b)) => {
                a.same_keys(b)
                    && a.entries
                        .iter()
                        .zip(&b.entries)
                        .all(|((_, x), (_, y))| x.same_structure(y))
            }
            _ => false,
        }
    }
}

fn schema_mismatch(x: &Tree, y: &Tree) -> ValueError {
    let keys = |t: &Tree| {
        t.entries
            .iter()
            .map(|(k, _)| k.as_str())
            .collect::<Vec<_>>()
            .join(",")
    };
    ValueError::SchemaMismatch(alloc::format!("[{}] vs [{}]", keys(x), keys(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn array_rejects_bad_shapes() {
        assert!(Array::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Array::new(vec![0], vec![]).is_err());
        assert!(Array::new(vec![], vec![1.0]).is_err());
        assert!(Array::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn scalar_broadcasts_into_tree_leaves() {
        let t = TensorValue::Tree(Tree::new().with("a", TensorValue::array(vec![1.0, 2.0])));
        let out = t.zip_with(&TensorValue::Scalar(10.0), |a, b| a + b).unwrap();
        assert_eq!(
            out,
            TensorValue::Tree(Tree::new().with("a", TensorValue::array(vec![11.0, 12.0])))
        );
    }

    #[test]
    fn mismatched_kinds_are_errors() {
        let a = TensorValue::array(vec![1.0, 2.0]);
        let b = TensorValue::array(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            a.zip_with(&b, |x, y| x + y),
            Err(ValueError::ShapeMismatch { .. })
        ));
        let t = TensorValue::Tree(Tree::new().with("a", a.clone()));
        assert!(matches!(
            a.zip_with(&t, |x, y| x + y),
            Err(ValueError::SchemaMismatch(_))
        ));
        let u = TensorValue::Tree(Tree::new().with("b", a.clone()));
        assert!(matches!(
            t.zip_with(&u, |x, y| x + y),
            Err(ValueError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn nan_propagates() {
        let a = TensorValue::array(vec![f64::NAN, 1.0]);
        let out = a.zip_with(&TensorValue::Scalar(1.0), |x, y| x * y).unwrap();
        assert!(out.flatten()[0].is_nan());
        assert!(!out.all_finite());
    }

    #[test]
    #[should_panic]
    fn duplicate_tree_key_panics() {
        Tree::new()
            .with("a", TensorValue::Scalar(1.0))
            .with("a", TensorValue::Scalar(2.0));
    }
}
