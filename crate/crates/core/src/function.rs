//! The function library available to optimizer programs.
//!
//! Elementwise functions follow NumPy semantics, evaluated in 64-bit floats.
//! Reductions flatten their inputs in canonical order (tree insertion order,
//! arrays row-major) and sum sequentially, so results are bitwise reproducible.

use crate::analysis::AbstractValue;
use crate::value::{TensorValue, ValueError};

/// Every function a statement may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Function {
    // unary elementwise
    Abs,
    Cos,
    Sin,
    Tan,
    Arcsin,
    Arccos,
    Arctan,
    Exp,
    Log,
    Sinh,
    Cosh,
    Tanh,
    Arcsinh,
    Arccosh,
    Arctanh,
    Sign,
    Exp2,
    Exp10,
    Expm1,
    Log10,
    Log2,
    Log1p,
    Square,
    Sqrt,
    Cube,
    Cbrt,
    Reciprocal,
    // unary reductions
    Norm,
    GlobalNorm,
    // binary
    Add,
    Sub,
    Mul,
    Div,
    Power,
    Maximum,
    Minimum,
    Dot,
    CosineSim,
    ClipByGlobalNorm,
    // ternary
    Interpolate,
    // nullary
    GetPi,
    GetE,
    GetEps,
}

/// Value produced by `get_eps`.
pub const EPS: f64 = 1e-8;

impl Function {
    /// The registry, in a fixed order.
    pub const ALL: [Function; 43] = [
        Function::Abs,
        Function::Cos,
        Function::Sin,
        Function::Tan,
        Function::Arcsin,
        Function::Arccos,
        Function::Arctan,
        Function::Exp,
        Function::Log,
        Function::Sinh,
        Function::Cosh,
        Function::Tanh,
        Function::Arcsinh,
        Function::Arccosh,
        Function::Arctanh,
        Function::Sign,
        Function::Exp2,
        Function::Exp10,
        Function::Expm1,
        Function::Log10,
        Function::Log2,
        Function::Log1p,
        Function::Square,
        Function::Sqrt,
        Function::Cube,
        Function::Cbrt,
        Function::Reciprocal,
        Function::Norm,
        Function::GlobalNorm,
        Function::Add,
        Function::Sub,
        Function::Mul,
        Function::Div,
        Function::Power,
        Function::Maximum,
        Function::Minimum,
        Function::Dot,
        Function::CosineSim,
        Function::ClipByGlobalNorm,
        Function::Interpolate,
        Function::GetPi,
        Function::GetE,
        Function::GetEps,
    ];

    pub fn name(self) -> &'static str {
        use Function::*;
        match self {
            Abs => "abs",
            Cos => "cos",
            Sin => "sin",
            Tan => "tan",
            Arcsin => "arcsin",
            Arccos => "arccos",
            Arctan => "arctan",
            Exp => "exp",
            Log => "log",
            Sinh => "sinh",
            Cosh => "cosh",
            Tanh => "tanh",
            Arcsinh => "arcsinh",
            Arccosh => "arccosh",
            Arctanh => "arctanh",
            Sign => "sign",
            Exp2 => "exp2",
            Exp10 => "exp10",
            Expm1 => "expm1",
            Log10 => "log10",
            Log2 => "log2",
            Log1p => "log1p",
            Square => "square",
            Sqrt => "sqrt",
            Cube => "cube",
            Cbrt => "cbrt",
            Reciprocal => "reciprocal",
            Norm => "norm",
            GlobalNorm => "global_norm",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Power => "power",
            Maximum => "maximum",
            Minimum => "minimum",
            Dot => "dot",
            CosineSim => "cosine_sim",
            ClipByGlobalNorm => "clip_by_global_norm",
            Interpolate => "interpolate",
            GetPi => "get_pi",
            GetE => "get_e",
            GetEps => "get_eps",
        }
    }

    /// Looks a function up by registry name or by one of the short aliases
    /// used in hand-written listings (`interp`, `clip`, `min`, `add`, ...).
    pub fn from_name(name: &str) -> Option<Function> {
        use Function::*;
        let alias = match name {
            "interp" => Some(Interpolate),
            "clip" => Some(ClipByGlobalNorm),
            "min" => Some(Minimum),
            "max" => Some(Maximum),
            "pow" => Some(Power),
            "add" => Some(Add),
            "sub" | "subtract" => Some(Sub),
            "mul" | "multiply" => Some(Mul),
            "div" | "divide" => Some(Div),
            _ => None,
        };
        alias.or_else(|| Function::ALL.iter().copied().find(|f| f.name() == name))
    }

    /// Infix operator symbol for `+ - * /`.
    pub fn infix(self) -> Option<char> {
        match self {
            Function::Add => Some('+'),
            Function::Sub => Some('-'),
            Function::Mul => Some('*'),
            Function::Div => Some('/'),
            _ => None,
        }
    }

    pub fn from_infix(op: char) -> Option<Function> {
        match op {
            '+' => Some(Function::Add),
            '-' => Some(Function::Sub),
            '*' => Some(Function::Mul),
            '/' => Some(Function::Div),
            _ => None,
        }
    }

    pub fn arity(self) -> usize {
        use Function::*;
        match self {
            GetPi | GetE | GetEps => 0,
            Add | Sub | Mul | Div | Power | Maximum | Minimum | Dot | CosineSim
            | ClipByGlobalNorm => 2,
            Interpolate => 3,
            _ => 1,
        }
    }

    /// Argument order is irrelevant to the result, bitwise, for finite inputs.
    pub fn is_commutative(self) -> bool {
        use Function::*;
        matches!(self, Add | Mul | Maximum | Minimum | Dot | CosineSim)
    }

    /// Stable numeric id, used by the functional hash.
    pub fn id(self) -> u8 {
        Function::ALL
            .iter()
            .position(|&f| f == self)
            .expect("registered") as u8
    }

    fn elementwise(self) -> Option<fn(f64) -> f64> {
        use Function::*;
        Some(match self {
            Abs => libm::fabs,
            Cos => libm::cos,
            Sin => libm::sin,
            Tan => libm::tan,
            Arcsin => libm::asin,
            Arccos => libm::acos,
            Arctan => libm::atan,
            Exp => libm::exp,
            Log => libm::log,
            Sinh => libm::sinh,
            Cosh => libm::cosh,
            Tanh => libm::tanh,
            Arcsinh => libm::asinh,
            Arccosh => libm::acosh,
            Arctanh => libm::atanh,
            Sign => sign,
            Exp2 => libm::exp2,
            Exp10 => libm::exp10,
            Expm1 => libm::expm1,
            Log10 => libm::log10,
            Log2 => libm::log2,
            Log1p => libm::log1p,
            Square => |x| x * x,
            Sqrt => libm::sqrt,
            Cube => |x| x * x * x,
            Cbrt => libm::cbrt,
            Reciprocal => |x| 1.0 / x,
            _ => return None,
        })
    }

    fn binary_elementwise(self) -> Option<fn(f64, f64) -> f64> {
        use Function::*;
        Some(match self {
            Add => |a, b| a + b,
            Sub => |a, b| a - b,
            Mul => |a, b| a * b,
            Div => |a, b| a / b,
            Power => libm::pow,
            Maximum => maximum,
            Minimum => minimum,
            _ => return None,
        })
    }

    /// Concrete semantics.
    pub fn apply(self, args: &[&TensorValue]) -> Result<TensorValue, ValueError> {
        use Function::*;
        if args.len() != self.arity() {
            return Err(ValueError::ArityError {
                function: self.name(),
                expected: self.arity(),
                got: args.len(),
            });
        }
        if let Some(f) = self.elementwise() {
            return Ok(args[0].map(f));
        }
        if let Some(f) = self.binary_elementwise() {
            return args[0].zip_with(args[1], f);
        }
        Ok(match self {
            Norm => args[0].map_leaves(|leaf| TensorValue::Scalar(leaf.global_norm())),
            GlobalNorm => TensorValue::Scalar(args[0].global_norm()),
            Dot => TensorValue::Scalar(args[0].zip_fold(args[1], 0.0, |acc, a, b| acc + a * b)?),
            CosineSim => {
                let dot = args[0].zip_fold(args[1], 0.0, |acc, a, b| acc + a * b)?;
                // Norms over the broadcast pair so a scalar partner counts once per element.
                let nx = libm::sqrt(args[0].zip_fold(args[1], 0.0, |acc, a, _| acc + a * a)?);
                let ny = libm::sqrt(args[0].zip_fold(args[1], 0.0, |acc, _, b| acc + b * b)?);
                TensorValue::Scalar(dot / (nx * ny))
            }
            ClipByGlobalNorm => {
                let c = scalar_arg(self, args, 1)?;
                clip_by_global_norm(args[0], c)
            }
            Interpolate => {
                let a = scalar_arg(self, args, 2)?;
                args[0].zip_with(args[1], move |x, y| (1.0 - a) * x + a * y)?
            }
            GetPi => TensorValue::Scalar(core::f64::consts::PI),
            GetE => TensorValue::Scalar(core::f64::consts::E),
            GetEps => TensorValue::Scalar(EPS),
            _ => unreachable!("covered by elementwise tables"),
        })
    }

    /// Abstract semantics: the output kind and shape, or the error `apply`
    /// would raise on values of these kinds.
    pub fn output_kind(self, args: &[&AbstractValue]) -> Result<AbstractValue, ValueError> {
        use Function::*;
        if args.len() != self.arity() {
            return Err(ValueError::ArityError {
                function: self.name(),
                expected: self.arity(),
                got: args.len(),
            });
        }
        if self.elementwise().is_some() {
            return Ok(args[0].clone());
        }
        if self.binary_elementwise().is_some() {
            return args[0].combine(args[1]);
        }
        Ok(match self {
            Norm => args[0].leaves_to_scalars(),
            GlobalNorm => AbstractValue::Scalar,
            Dot | CosineSim => {
                args[0].combine(args[1])?;
                AbstractValue::Scalar
            }
            ClipByGlobalNorm => {
                require_scalar(self, args[1], 1)?;
                args[0].clone()
            }
            Interpolate => {
                require_scalar(self, args[2], 2)?;
                args[0].combine(args[1])?
            }
            GetPi | GetE | GetEps => AbstractValue::Scalar,
            _ => unreachable!("covered by elementwise tables"),
        })
    }
}

impl core::fmt::Display for Function {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

fn scalar_arg(fun: Function, args: &[&TensorValue], position: usize) -> Result<f64, ValueError> {
    args[position]
        .as_scalar()
        .ok_or(ValueError::ScalarRequired {
            function: fun.name(),
            position,
        })
}

fn require_scalar(fun: Function, arg: &AbstractValue, position: usize) -> Result<(), ValueError> {
    match arg {
        AbstractValue::Scalar => Ok(()),
        _ => Err(ValueError::ScalarRequired {
            function: fun.name(),
            position,
        }),
    }
}

/// sign(0) = 0, sign(NaN) = NaN.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        x * 0.0
    }
}

// NaN-propagating and symmetric in its arguments, including signed zeros.
fn maximum(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a > b {
        a
    } else if b > a {
        b
    } else if a.is_sign_positive() {
        a
    } else {
        b
    }
}

fn minimum(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a < b {
        a
    } else if b < a {
        b
    } else if a.is_sign_negative() {
        a
    } else {
        b
    }
}

/// Rescales `x` by `min(1, c / global_norm(x))`. Identity when the norm is
/// zero or already within `c`.
pub fn clip_by_global_norm(x: &TensorValue, c: f64) -> TensorValue {
    let norm = x.global_norm();
    if norm == 0.0 || !(norm > c) {
        return x.clone();
    }
    let ratio = c / norm;
    let scale = if ratio < 1.0 { ratio } else { 1.0 };
    x.map(|v| v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Tree;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn apply(f: Function, args: &[TensorValue]) -> TensorValue {
        let refs: Vec<&TensorValue> = args.iter().collect();
        f.apply(&refs).unwrap()
    }

    #[test]
    fn registry_is_frozen() {
        let names: Vec<&str> = Function::ALL.iter().map(|f| f.name()).collect();
        assert_eq!(names.len(), 43);
        assert_eq!(
            names.join(" "),
            "abs cos sin tan arcsin arccos arctan exp log sinh cosh tanh arcsinh arccosh \
             arctanh sign exp2 exp10 expm1 log10 log2 log1p square sqrt cube cbrt reciprocal \
             norm global_norm + - * / power maximum minimum dot cosine_sim clip_by_global_norm \
             interpolate get_pi get_e get_eps"
        );
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 43);
        for f in Function::ALL {
            assert_eq!(Function::from_name(f.name()), Some(f));
            assert_eq!(Function::ALL[f.id() as usize], f);
        }
        let arities = Function::ALL.iter().fold([0usize; 4], |mut acc, f| {
            acc[f.arity()] += 1;
            acc
        });
        assert_eq!(arities, [3, 29, 10, 1]);
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(Function::from_name("interp"), Some(Function::Interpolate));
        assert_eq!(Function::from_name("clip"), Some(Function::ClipByGlobalNorm));
        assert_eq!(Function::from_name("min"), Some(Function::Minimum));
        assert_eq!(Function::from_name("bogus"), None);
    }

    #[test]
    fn constants() {
        assert_eq!(apply(Function::GetEps, &[]), TensorValue::Scalar(1.0e-8));
        assert_eq!(
            apply(Function::GetPi, &[]),
            TensorValue::Scalar(3.141592653589793)
        );
        assert_eq!(apply(Function::GetE, &[]), TensorValue::Scalar(2.718281828459045));
    }

    #[test]
    fn interpolate_midpoint() {
        let out = apply(
            Function::Interpolate,
            &[2.0.into(), 4.0.into(), 0.5.into()],
        );
        assert_eq!(out, TensorValue::Scalar(3.0));
    }

    #[test]
    fn interpolate_requires_scalar_weight() {
        let a = TensorValue::array(vec![1.0]);
        let err = Function::Interpolate
            .apply(&[&a, &a, &a])
            .unwrap_err();
        assert!(matches!(err, ValueError::ScalarRequired { position: 2, .. }));
    }

    #[test]
    fn sign_convention() {
        let out = apply(Function::Sign, &[TensorValue::array(vec![-3.2, 0.0, 7.0])]);
        assert_eq!(out, TensorValue::array(vec![-1.0, 0.0, 1.0]));
        assert!(sign(f64::NAN).is_nan());
    }

    #[test]
    fn clip_scales_to_norm() {
        // |[3, 4]| = 5, so clipping to 1 scales by 1/5.
        let out = apply(
            Function::ClipByGlobalNorm,
            &[TensorValue::array(vec![3.0, 4.0]), 1.0.into()],
        );
        let v = out.flatten();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_with_negative_bound_flips_sign() {
        let out = apply(
            Function::ClipByGlobalNorm,
            &[TensorValue::array(vec![3.0, 4.0]), (-5.0).into()],
        );
        assert_eq!(out, TensorValue::array(vec![-3.0, -4.0]));
        let zero = TensorValue::array(vec![0.0, 0.0]);
        assert_eq!(
            apply(Function::ClipByGlobalNorm, &[zero.clone(), (-1.0).into()]),
            zero
        );
    }

    #[test]
    fn tree_plus_scalar() {
        let t = TensorValue::Tree(Tree::new().with("a", TensorValue::array(vec![1.0, 2.0])));
        let out = apply(Function::Add, &[t, 10.0.into()]);
        assert_eq!(
            out,
            TensorValue::Tree(Tree::new().with("a", TensorValue::array(vec![11.0, 12.0])))
        );
    }

    #[test]
    fn norm_keeps_tree_structure() {
        let t = TensorValue::Tree(
            Tree::new()
                .with("a", TensorValue::array(vec![3.0, 4.0]))
                .with("b", TensorValue::Scalar(-2.0)),
        );
        let out = apply(Function::Norm, &[t.clone()]);
        assert_eq!(
            out,
            TensorValue::Tree(
                Tree::new()
                    .with("a", TensorValue::Scalar(5.0))
                    .with("b", TensorValue::Scalar(2.0))
            )
        );
        assert_eq!(
            apply(Function::GlobalNorm, &[t]),
            TensorValue::Scalar(libm::sqrt(29.0))
        );
    }

    #[test]
    fn reductions_treat_input_as_flat_vector() {
        let x = TensorValue::array(vec![1.0, 2.0, 3.0]);
        let y = TensorValue::array(vec![4.0, -5.0, 6.0]);
        assert_eq!(apply(Function::Dot, &[x.clone(), y.clone()]), TensorValue::Scalar(12.0));
        let cs = apply(Function::CosineSim, &[x.clone(), x.clone()]).as_scalar().unwrap();
        assert!((cs - 1.0).abs() < 1e-15);
        let zero = TensorValue::array(vec![0.0; 3]);
        assert!(apply(Function::CosineSim, &[zero, x]).as_scalar().unwrap().is_nan());
    }

    #[test]
    fn domain_errors_are_nan() {
        let out = apply(Function::Log, &[(-1.0).into()]).as_scalar().unwrap();
        assert!(out.is_nan());
        let out = apply(Function::Div, &[0.0.into(), 0.0.into()]).as_scalar().unwrap();
        assert!(out.is_nan());
        let out = apply(Function::Arcsin, &[2.0.into()]).as_scalar().unwrap();
        assert!(out.is_nan());
    }

    #[test]
    fn arity_checked() {
        let x = TensorValue::Scalar(1.0);
        assert!(matches!(
            Function::Add.apply(&[&x]),
            Err(ValueError::ArityError { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn abstract_rules_agree_with_concrete() {
        let arr = TensorValue::array(vec![0.5, -0.25]);
        let tree = TensorValue::Tree(
            Tree::new()
                .with("a", TensorValue::array(vec![0.1, 0.2, 0.3]))
                .with("b", TensorValue::Scalar(0.7)),
        );
        let values = [TensorValue::Scalar(0.3), arr, tree];
        for f in Function::ALL {
            let n = f.arity();
            let combos: Vec<Vec<usize>> = match n {
                0 => vec![vec![]],
                1 => (0..3).map(|i| vec![i]).collect(),
                2 => (0..9).map(|i| vec![i / 3, i % 3]).collect(),
                _ => (0..27).map(|i| vec![i / 9, (i / 3) % 3, i % 3]).collect(),
            };
            for combo in combos {
                let args: Vec<&TensorValue> = combo.iter().map(|&i| &values[i]).collect();
                let kinds: Vec<AbstractValue> = args.iter().map(|v| AbstractValue::of(v)).collect();
                let kind_refs: Vec<&AbstractValue> = kinds.iter().collect();
                match (f.apply(&args), f.output_kind(&kind_refs)) {
                    (Ok(v), Ok(k)) => assert_eq!(AbstractValue::of(&v), k, "{f} {combo:?}"),
                    (Err(e1), Err(e2)) => assert_eq!(
                        core::mem::discriminant(&e1),
                        core::mem::discriminant(&e2)
                    ),
                    (a, b) => panic!("{f} {combo:?}: {a:?} vs {b:?}"),
                }
            }
        }
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e3f64..1e3
    }

    proptest! {
        #[test]
        fn unary_maps_tree_leaves_bitwise(xs in proptest::collection::vec(finite(), 1..8)) {
            let arr = TensorValue::array(xs);
            let tree = TensorValue::Tree(Tree::new().with("a", arr.clone()));
            for f in Function::ALL.iter().filter(|f| f.elementwise().is_some()) {
                let direct = f.apply(&[&arr]).unwrap();
                let leafwise = f.apply(&[&tree]).unwrap();
                let expected = TensorValue::Tree(Tree::new().with("a", direct));
                prop_assert!(leafwise.bit_eq(&expected));
            }
        }

        #[test]
        fn commutative_binaries_are_symmetric(
            xs in proptest::collection::vec(finite(), 4),
            ys in proptest::collection::vec(finite(), 4),
        ) {
            let x = TensorValue::array(xs);
            let y = TensorValue::array(ys);
            for f in Function::ALL.iter().filter(|f| f.is_commutative()) {
                let a = f.apply(&[&x, &y]).unwrap();
                let b = f.apply(&[&y, &x]).unwrap();
                prop_assert!(a.bit_eq(&b), "{}", f);
            }
        }

        #[test]
        fn interpolate_same_endpoints_is_near_identity(x in finite(), a in 0.0f64..=1.0) {
            let out = Function::Interpolate
                .apply(&[&x.into(), &x.into(), &a.into()])
                .unwrap()
                .as_scalar()
                .unwrap();
            let ulp = libm::nextafter(x.abs(), f64::INFINITY) - x.abs();
            prop_assert!((out - x).abs() <= 4.0 * ulp);
        }

        #[test]
        fn clip_within_bound_is_identity(
            xs in proptest::collection::vec(finite(), 1..6),
            slack in 0.0f64..10.0,
        ) {
            let x = TensorValue::array(xs);
            let c = x.global_norm() + slack;
            let out = clip_by_global_norm(&x, c);
            prop_assert!(out.bit_eq(&x));
        }
    }
}
