//! Reference interpreter and randomized equivalence oracle.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ir::{Expr, Func, KernelDef, SizeEnv, Sort, Symbol};

#[derive(Clone, Debug, PartialEq)]
pub enum Value<F> {
    Scalar(F),
    Size(u64),
    Arr(Vec<Value<F>>),
    Tup(Box<Value<F>>, Box<Value<F>>),
    Closure(Box<Expr>, Vec<Value<F>>),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: u64, len: usize },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {expected} arguments, got {got}")]
    ArityError { name: String, expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unbound variable %{0}")]
    UnboundVariable(u32),
    #[error("unbound input `{0}`")]
    UnboundInput(String),
    #[error("unbound size `{0}`")]
    UnboundSize(String),
    #[error("type error: {0}")]
    TypeError(String),
}

fn shape<T>(msg: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::ShapeMismatch(msg.into()))
}

fn type_err<T>(msg: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::TypeError(msg.into()))
}

impl<F: Float> Value<F> {
    pub fn scalar(&self) -> Result<F, EvalError> {
        match self {
            Value::Scalar(x) => Ok(*x),
            Value::Size(n) => Ok(F::from(*n).expect("size fits in float")),
            other => type_err(format!("expected a scalar, got {}", other.kind())),
        }
    }

    pub fn size(&self) -> Result<u64, EvalError> {
        match self {
            Value::Size(n) => Ok(*n),
            other => type_err(format!("expected a size, got {}", other.kind())),
        }
    }

    pub fn array(&self) -> Result<&[Value<F>], EvalError> {
        match self {
            Value::Arr(v) => Ok(v),
            other => type_err(format!("expected an array, got {}", other.kind())),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Size(_) => "size",
            Value::Arr(_) => "array",
            Value::Tup(..) => "tuple",
            Value::Closure(..) => "function",
        }
    }

    /// Scalars in row-major order.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        fn go<F: Float>(v: &Value<F>, out: &mut Vec<F>) {
            match v {
                Value::Scalar(x) => out.push(*x),
                Value::Size(n) => out.push(F::from(*n).unwrap()),
                Value::Arr(xs) => xs.iter().for_each(|x| go(x, out)),
                Value::Tup(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                Value::Closure(..) => {}
            }
        }
        go(self, &mut out);
        out
    }

    pub fn vector(xs: &[F]) -> Value<F> {
        Value::Arr(xs.iter().map(|x| Value::Scalar(*x)).collect())
    }

    pub fn matrix(rows: &[Vec<F>]) -> Value<F> {
        Value::Arr(rows.iter().map(|r| Value::vector(r)).collect())
    }
}

impl<F: Float + fmt::Display> fmt::Display for Value<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(x) => write!(f, "{x}"),
            Value::Size(n) => write!(f, "#{n}"),
            Value::Arr(xs) => {
                f.write_str("[")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str("]")
            }
            Value::Tup(a, b) => write!(f, "({a}, {b})"),
            Value::Closure(body, _) => write!(f, "<lam {body}>"),
        }
    }
}

/// Evaluation context: input values and size bindings.
pub struct Interp<'a, F> {
    pub inputs: &'a BTreeMap<Symbol, Value<F>>,
    pub sizes: &'a SizeEnv,
}

impl<'a, F: Float> Interp<'a, F> {
    pub fn new(inputs: &'a BTreeMap<Symbol, Value<F>>, sizes: &'a SizeEnv) -> Self {
        Interp { inputs, sizes }
    }

    /// Call-by-value evaluation. `env.last()` is the value of `%0`.
    pub fn eval(&self, e: &Expr, env: &mut Vec<Value<F>>) -> Result<Value<F>, EvalError> {
        match e {
            Expr::Var(i) => {
                let n = env.len();
                if (*i as usize) < n {
                    Ok(env[n - 1 - *i as usize].clone())
                } else {
                    Err(EvalError::UnboundVariable(*i))
                }
            }
            Expr::NumLit(r) => Ok(Value::Scalar(F::from(*r.numer()).unwrap() / F::from(*r.denom()).unwrap())),
            Expr::SizeLit(n) => Ok(Value::Size(*n)),
            Expr::SizeParam(p) => {
                self.sizes.get(p).map(|n| Value::Size(*n)).ok_or_else(|| EvalError::UnboundSize(p.to_string()))
            }
            Expr::Input(name) => {
                self.inputs.get(name).cloned().ok_or_else(|| EvalError::UnboundInput(name.to_string()))
            }
            Expr::Lambda(body) => Ok(Value::Closure(body.clone(), env.clone())),
            Expr::App(f, x) => {
                let arg = self.eval(x, env)?;
                if let Expr::Lambda(body) = &**f {
                    return self.with(env, arg, |me, env| me.eval(body, env));
                }
                let fv = self.eval(f, env)?;
                self.apply(fv, arg)
            }
            Expr::Build(n, f) => {
                let n = self.eval(n, env)?.size()?;
                let mut out = Vec::with_capacity(n as usize);
                if let Expr::Lambda(body) = &**f {
                    for i in 0..n {
                        out.push(self.with(env, Value::Size(i), |me, env| me.eval(body, env))?);
                    }
                } else {
                    let fv = self.eval(f, env)?;
                    for i in 0..n {
                        out.push(self.apply(fv.clone(), Value::Size(i))?);
                    }
                }
                Ok(Value::Arr(out))
            }
            Expr::Index(a, i) => {
                let i = self.eval(i, env)?.size()?;
                self.eval_at(a, &mut vec![i], env)
            }
            Expr::IFold(n, init, f) => {
                let n = self.eval(n, env)?.size()?;
                let mut acc = self.eval(init, env)?;
                match &**f {
                    Expr::Lambda(inner) if matches!(&**inner, Expr::Lambda(_)) => {
                        let Expr::Lambda(body) = &**inner else { unreachable!() };
                        for i in 0..n {
                            env.push(Value::Size(i));
                            env.push(acc);
                            let r = self.eval(body, env);
                            env.pop();
                            env.pop();
                            acc = r?;
                        }
                    }
                    _ => {
                        let fv = self.eval(f, env)?;
                        for i in 0..n {
                            let g = self.apply(fv.clone(), Value::Size(i))?;
                            acc = self.apply(g, acc)?;
                        }
                    }
                }
                Ok(acc)
            }
            Expr::Tuple(a, b) => Ok(Value::Tup(Box::new(self.eval(a, env)?), Box::new(self.eval(b, env)?))),
            Expr::Fst(t) => match self.eval(t, env)? {
                Value::Tup(a, _) => Ok(*a),
                other => type_err(format!("fst of {}", other.kind())),
            },
            Expr::Snd(t) => match self.eval(t, env)? {
                Value::Tup(_, b) => Ok(*b),
                other => type_err(format!("snd of {}", other.kind())),
            },
            Expr::Call(f, args) => {
                let vals = args.iter().map(|a| self.eval(a, env)).collect::<Result<Vec<_>, _>>()?;
                eval_library(f, &vals)
            }
        }
    }

    /// `e[idx[last]]...[idx[0]]`, computing only the requested element when
    /// `e` is built rather than materializing whole arrays.
    fn eval_at(&self, e: &Expr, idx: &mut Vec<u64>, env: &mut Vec<Value<F>>) -> Result<Value<F>, EvalError> {
        let Some(&i) = idx.last() else {
            return self.eval(e, env);
        };
        match e {
            Expr::Build(n, f) if matches!(&**f, Expr::Lambda(_)) => {
                let Expr::Lambda(body) = &**f else { unreachable!() };
                let n = self.eval(n, env)?.size()?;
                if i >= n {
                    return Err(EvalError::IndexOutOfBounds { index: i, len: n as usize });
                }
                idx.pop();
                let r = self.with(env, Value::Size(i), |me, env| me.eval_at(body, idx, env));
                idx.push(i);
                r
            }
            Expr::Index(a, j) => {
                let j = self.eval(j, env)?.size()?;
                idx.push(j);
                let r = self.eval_at(a, idx, env);
                idx.pop();
                r
            }
            Expr::App(f, x) if matches!(&**f, Expr::Lambda(_)) => {
                let Expr::Lambda(body) = &**f else { unreachable!() };
                let arg = self.eval(x, env)?;
                self.with(env, arg, |me, env| me.eval_at(body, idx, env))
            }
            _ => {
                let mut v = self.eval(e, env)?;
                for &k in idx.iter().rev() {
                    let xs = v.array()?;
                    v = xs.get(k as usize).cloned().ok_or(EvalError::IndexOutOfBounds { index: k, len: xs.len() })?;
                }
                Ok(v)
            }
        }
    }

    fn with<T>(
        &self,
        env: &mut Vec<Value<F>>,
        v: Value<F>,
        k: impl FnOnce(&Self, &mut Vec<Value<F>>) -> Result<T, EvalError>,
    ) -> Result<T, EvalError> {
        env.push(v);
        let r = k(self, env);
        env.pop();
        r
    }

    pub fn apply(&self, f: Value<F>, arg: Value<F>) -> Result<Value<F>, EvalError> {
        match f {
            Value::Closure(body, mut cenv) => {
                cenv.push(arg);
                self.eval(&body, &mut cenv)
            }
            other => type_err(format!("applied a {}", other.kind())),
        }
    }
}

/// Evaluates a closed term.
pub fn eval<F: Float>(e: &Expr, inputs: &BTreeMap<Symbol, Value<F>>, sizes: &SizeEnv) -> Result<Value<F>, EvalError> {
    Interp::new(inputs, sizes).eval(e, &mut Vec::new())
}

fn arity(f: &Func, args: usize, expected: usize) -> Result<(), EvalError> {
    if args == expected {
        Ok(())
    } else {
        Err(EvalError::ArityError { name: f.name(), expected, got: args })
    }
}

fn dot<F: Float>(a: &[Value<F>], b: &[Value<F>]) -> Result<F, EvalError> {
    if a.len() != b.len() {
        return shape(format!("dot of lengths {} and {}", a.len(), b.len()));
    }
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc = x.scalar()? * y.scalar()? + acc;
    }
    Ok(acc)
}

fn rows<F: Float>(m: &Value<F>) -> Result<Vec<&[Value<F>]>, EvalError> {
    m.array()?.iter().map(|r| r.array()).collect()
}

fn transpose<F: Float>(m: &Value<F>) -> Result<Value<F>, EvalError> {
    let rs = rows(m)?;
    let cols = rs.first().map_or(0, |r| r.len());
    if rs.iter().any(|r| r.len() != cols) {
        return shape("ragged matrix");
    }
    Ok(Value::Arr((0..cols).map(|j| Value::Arr(rs.iter().map(|r| r[j].clone()).collect())).collect()))
}

/// `op(x, y)` lifted elementwise over arrays, broadcasting scalars.
fn lift<F: Float>(x: &Value<F>, y: &Value<F>, op: fn(F, F) -> F) -> Result<Value<F>, EvalError> {
    match (x, y) {
        (Value::Arr(a), Value::Arr(b)) => {
            if a.len() != b.len() {
                return shape(format!("elementwise lengths {} and {}", a.len(), b.len()));
            }
            Ok(Value::Arr(a.iter().zip(b).map(|(p, q)| lift(p, q, op)).collect::<Result<_, _>>()?))
        }
        (Value::Arr(a), s) => Ok(Value::Arr(a.iter().map(|p| lift(p, s, op)).collect::<Result<_, _>>()?)),
        (s, Value::Arr(b)) => Ok(Value::Arr(b.iter().map(|q| lift(s, q, op)).collect::<Result<_, _>>()?)),
        (a, b) => Ok(Value::Scalar(op(a.scalar()?, b.scalar()?))),
    }
}

fn gemv<F: Float>(t: bool, args: &[Value<F>]) -> Result<Value<F>, EvalError> {
    let (a, b) = (args[0].scalar()?, args[3].scalar()?);
    let m = if t { transpose(&args[1])? } else { args[1].clone() };
    let x = args[2].array()?;
    let c = args[4].array()?;
    let rs = rows(&m)?;
    if rs.len() != c.len() {
        return shape(format!("gemv output length {} vs {}", rs.len(), c.len()));
    }
    let out = rs.iter().zip(c).map(|(r, ci)| Ok(Value::Scalar(a * dot(r, x)? + b * ci.scalar()?)));
    Ok(Value::Arr(out.collect::<Result<_, EvalError>>()?))
}

fn gemm<F: Float>(ta: bool, tb: bool, args: &[Value<F>]) -> Result<Value<F>, EvalError> {
    let a = if ta { transpose(&args[1])? } else { args[1].clone() };
    // Row j of op(B)^T is column j of op(B).
    let bt = if tb { args[2].clone() } else { transpose(&args[2])? };
    let c = rows(&args[4])?;
    let ar = rows(&a)?;
    if ar.len() != c.len() {
        return shape(format!("gemm output rows {} vs {}", ar.len(), c.len()));
    }
    let mut out = Vec::with_capacity(ar.len());
    for (ai, ci) in ar.iter().zip(c) {
        let cv = Value::Arr(ci.to_vec());
        let row = gemv(false, &[args[0].clone(), bt.clone(), Value::Arr(ai.to_vec()), args[3].clone(), cv])?;
        out.push(row);
    }
    Ok(Value::Arr(out))
}

fn fill<F: Float>(args: &[Value<F>]) -> Result<Value<F>, EvalError> {
    let n = args[1].size()?;
    Ok(Value::Arr(vec![args[0].clone(); n as usize]))
}

/// Semantics of the built-in and library functions.
pub fn eval_library<F: Float>(f: &Func, args: &[Value<F>]) -> Result<Value<F>, EvalError> {
    let want = match f {
        Func::Add | Func::Mul | Func::Dot | Func::Mv | Func::Mm | Func::TAdd | Func::TMul => 2,
        Func::Memset | Func::Full => 2,
        Func::Axpy => 3,
        Func::Gemv(_) | Func::Gemm(..) => 5,
        Func::Transpose | Func::Sum => 1,
        Func::Named(s) => return Err(EvalError::UnknownFunction(s.to_string())),
    };
    arity(f, args.len(), want)?;
    match f {
        Func::Add | Func::Mul => match (&args[0], &args[1]) {
            (Value::Size(a), Value::Size(b)) => Ok(Value::Size(if *f == Func::Add { a + b } else { a * b })),
            (a, b) => {
                let (a, b) = (a.scalar()?, b.scalar()?);
                Ok(Value::Scalar(if *f == Func::Add { a + b } else { a * b }))
            }
        },
        Func::Dot => Ok(Value::Scalar(dot(args[0].array()?, args[1].array()?)?)),
        Func::Axpy => {
            let a = args[0].scalar()?;
            let (x, y) = (args[1].array()?, args[2].array()?);
            if x.len() != y.len() {
                return shape(format!("axpy of lengths {} and {}", x.len(), y.len()));
            }
            let out = x.iter().zip(y).map(|(p, q)| Ok(Value::Scalar(a * p.scalar()? + q.scalar()?)));
            Ok(Value::Arr(out.collect::<Result<_, EvalError>>()?))
        }
        Func::Gemv(t) => gemv(*t, args),
        Func::Gemm(ta, tb) => gemm(*ta, *tb, args),
        Func::Transpose => transpose(&args[0]),
        Func::Memset | Func::Full => fill(args),
        Func::Sum => {
            let mut acc = F::zero();
            for x in args[0].array()? {
                acc = x.scalar()? + acc;
            }
            Ok(Value::Scalar(acc))
        }
        Func::Mv => {
            let x = args[1].array()?;
            let out = rows(&args[0])?.into_iter().map(|r| Ok(Value::Scalar(dot(r, x)?)));
            Ok(Value::Arr(out.collect::<Result<_, EvalError>>()?))
        }
        Func::Mm => {
            let bt = transpose(&args[1])?;
            let out =
                rows(&args[0])?.into_iter().map(|r| eval_library(&Func::Mv, &[bt.clone(), Value::Arr(r.to_vec())]));
            Ok(Value::Arr(out.collect::<Result<_, EvalError>>()?))
        }
        Func::TAdd => lift(&args[0], &args[1], |a, b| a + b),
        Func::TMul => lift(&args[0], &args[1], |a, b| a * b),
        Func::Named(_) => unreachable!(),
    }
}

/// Comparison tolerance: values match when within `rel` relatively or `abs`
/// absolutely.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-9, abs: 1e-12 }
    }
}

impl Tolerance {
    pub fn close<F: Float>(&self, a: F, b: F) -> bool {
        let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
        let d = (a - b).abs();
        d <= self.abs || d <= self.rel * a.abs().max(b.abs())
    }

    /// First point where the two values differ, if any.
    pub fn compare<F: Float + fmt::Display>(&self, a: &Value<F>, b: &Value<F>) -> Option<String> {
        self.diff(a, b, &mut String::new())
    }

    fn diff<F: Float + fmt::Display>(&self, a: &Value<F>, b: &Value<F>, path: &mut String) -> Option<String> {
        match (a, b) {
            (Value::Size(x), Value::Size(y)) if x == y => None,
            (Value::Arr(xs), Value::Arr(ys)) => {
                if xs.len() != ys.len() {
                    return Some(format!("at {path}: lengths {} and {}", xs.len(), ys.len()));
                }
                for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                    let n = path.len();
                    path.push_str(&format!("[{i}]"));
                    let d = self.diff(x, y, path);
                    path.truncate(n);
                    if d.is_some() {
                        return d;
                    }
                }
                None
            }
            (Value::Tup(a1, a2), Value::Tup(b1, b2)) => self.diff(a1, b1, path).or_else(|| self.diff(a2, b2, path)),
            (Value::Scalar(_) | Value::Size(_), Value::Scalar(_) | Value::Size(_)) => {
                let (x, y) = (a.scalar().unwrap(), b.scalar().unwrap());
                if self.close(x, y) {
                    None
                } else {
                    Some(format!("at {path}: {x} vs {y}"))
                }
            }
            _ => Some(format!("at {path}: {} vs {}", a.kind(), b.kind())),
        }
    }
}

/// Random value of `sort`: floats uniform in [-1, 1], array lengths from `sizes`.
pub fn random_value<F: Float, R: Rng>(sort: &Sort, sizes: &SizeEnv, rng: &mut R) -> Result<Value<F>, EvalError> {
    match sort {
        Sort::Float => Ok(Value::Scalar(F::from(rng.gen_range(-1.0..=1.0f64)).unwrap())),
        Sort::Size => Ok(Value::Size(rng.gen_range(0..4))),
        Sort::Array(elem, dim) => {
            let n = dim.eval(sizes).ok_or_else(|| EvalError::UnboundSize(dim.to_string()))?;
            Ok(Value::Arr((0..n).map(|_| random_value(elem, sizes, rng)).collect::<Result<_, _>>()?))
        }
        Sort::Tuple(a, b) => {
            Ok(Value::Tup(Box::new(random_value(a, sizes, rng)?), Box::new(random_value(b, sizes, rng)?)))
        }
        Sort::Fn(..) | Sort::Unknown => type_err(format!("cannot generate a value of sort {sort}")),
    }
}

/// Random inputs for every parameter of `kernel`.
pub fn random_inputs<F: Float, R: Rng>(
    kernel: &KernelDef,
    sizes: &SizeEnv,
    rng: &mut R,
) -> Result<BTreeMap<Symbol, Value<F>>, EvalError> {
    kernel.params.iter().map(|(n, s)| Ok((n.clone(), random_value(s, sizes, rng)?))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass { trials: usize },
    Fail { trial: usize, reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

/// Evaluates `a` and `b` on `trials` random inputs for `kernel` (at its test
/// sizes) and compares the results.
pub fn equiv_check(a: &Expr, b: &Expr, kernel: &KernelDef, trials: usize, seed: u64, tol: Tolerance) -> Verdict {
    let sizes = kernel.test_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let inputs = match random_inputs::<f64, _>(kernel, &sizes, &mut rng) {
            Ok(i) => i,
            Err(e) => return Verdict::Fail { trial, reason: format!("input generation: {e}") },
        };
        let va = match eval(a, &inputs, &sizes) {
            Ok(v) => v,
            Err(e) => return Verdict::Fail { trial, reason: format!("left: {e}") },
        };
        let vb = match eval(b, &inputs, &sizes) {
            Ok(v) => v,
            Err(e) => return Verdict::Fail { trial, reason: format!("right: {e}") },
        };
        if let Some(d) = tol.compare(&va, &vb) {
            return Verdict::Fail { trial, reason: d };
        }
    }
    Verdict::Pass { trials }
}
