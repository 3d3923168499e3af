//! Cost models for the three targets.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::egraph::{ENode, Op};
use crate::ir::{Expr, Func, SizeEnv, SizeExpr, Sort, Symbol};
use crate::pattern::{node_size, node_sort};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    PureC,
    Blas,
    Pytorch,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::PureC, Target::Blas, Target::Pytorch];

    pub fn name(self) -> &'static str {
        match self {
            Target::PureC => "pure-c",
            Target::Blas => "blas",
            Target::Pytorch => "pytorch",
        }
    }

    pub fn from_name(s: &str) -> Option<Target> {
        match s {
            "pure-c" | "pure_c" | "c" => Some(Target::PureC),
            "blas" => Some(Target::Blas),
            "pytorch" | "torch" => Some(Target::Pytorch),
            _ => None,
        }
    }

    /// Whether `f` is a library function available on this target.
    pub fn provides(self, f: &Func) -> bool {
        match self {
            Target::PureC => false,
            Target::Blas => f.is_blas(),
            Target::Pytorch => f.is_pytorch(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numeric type used for costs.
pub trait CostScalar: Clone + fmt::Debug + PartialOrd + Add<Output = Self> + Mul<Output = Self> + Zero + One {
    fn from_ratio(numer: i64, denom: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl CostScalar for Ratio<i128> {
    fn from_ratio(numer: i64, denom: i64) -> Self {
        Ratio::new(numer as i128, denom as i128)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::INFINITY)
    }
}

impl CostScalar for f64 {
    fn from_ratio(numer: i64, denom: i64) -> Self {
        numer as f64 / denom as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// A cost that may be infinite (library call unavailable on the target, or
/// no acyclic derivation).
#[derive(Clone, Debug, PartialEq)]
pub enum Cost<S> {
    Finite(S),
    Infinite,
}

impl<S: CostScalar> Cost<S> {
    pub fn zero() -> Self {
        Cost::Finite(S::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(&self) -> Option<&S> {
        match self {
            Cost::Finite(s) => Some(s),
            Cost::Infinite => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Cost::Finite(s) => s.to_f64(),
            Cost::Infinite => f64::INFINITY,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a.clone() + b.clone()),
            _ => Cost::Infinite,
        }
    }

    pub fn scale(&self, w: &S) -> Self {
        match self {
            Cost::Finite(a) if w.is_zero() => {
                let _ = a;
                Cost::zero()
            }
            Cost::Finite(a) => Cost::Finite(a.clone() * w.clone()),
            Cost::Infinite => Cost::Infinite,
        }
    }
}

impl<S: CostScalar> PartialOrd for Cost<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Some(Ordering::Less),
            (Cost::Infinite, Cost::Finite(_)) => Some(Ordering::Greater),
            (Cost::Infinite, Cost::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl<S: CostScalar + fmt::Display> fmt::Display for Cost<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(s) => write!(f, "{s}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("cannot resolve dimension for {0}")]
    UnresolvedDimension(String),
    #[error("{0} is not available on this target")]
    NotInTarget(String),
}

/// What a node's own cost term is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribution {
    Library,
    Compute,
    Leaf,
}

/// A node's cost as a weighted sum of its children's costs plus its own term.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCost<S> {
    pub child_weights: Vec<S>,
    pub own: S,
    pub kind: Attribution,
}

#[derive(Clone, Debug)]
pub struct CostModel {
    pub target: Target,
    pub size_env: SizeEnv,
}

fn dim(s: &SizeExpr, env: &SizeEnv) -> Result<u64, CostError> {
    s.eval(env).ok_or_else(|| CostError::UnresolvedDimension(s.to_string()))
}

impl CostModel {
    pub fn new(target: Target, size_env: SizeEnv) -> CostModel {
        CostModel { target, size_env }
    }

    fn eval(&self, s: &SizeExpr) -> Result<u64, CostError> {
        dim(s, &self.size_env)
    }

    fn vec_len(&self, s: &Sort, what: &str) -> Result<u64, CostError> {
        match s {
            Sort::Array(_, n) => self.eval(n),
            _ => Err(CostError::UnresolvedDimension(format!("{what} argument of sort {s}"))),
        }
    }

    fn mat_dims(&self, s: &Sort, what: &str) -> Result<(u64, u64), CostError> {
        let d = s.dims();
        if d.len() >= 2 {
            Ok((self.eval(&d[0])?, self.eval(&d[1])?))
        } else {
            Err(CostError::UnresolvedDimension(format!("{what} argument of sort {s}")))
        }
    }

    /// Product of all array dimensions; 0 for scalars.
    fn elems(&self, s: &Sort, what: &str) -> Result<u64, CostError> {
        match s {
            Sort::Float | Sort::Size => Ok(0),
            Sort::Array(..) => s
                .element_count(&self.size_env)
                .ok_or_else(|| CostError::UnresolvedDimension(format!("{what} argument of sort {s}"))),
            _ => Err(CostError::UnresolvedDimension(format!("{what} argument of sort {s}"))),
        }
    }

    /// Cost decomposition of a node given its children's sorts and size
    /// values.
    pub fn node_cost<S: CostScalar>(
        &self,
        op: &Op,
        sorts: &[Sort],
        sizes: &[Option<SizeExpr>],
    ) -> Result<NodeCost<S>, CostError> {
        let n = sorts.len();
        let one = || S::one();
        let int = |v: u64| S::from_ratio(v as i64, 1);
        let frac = |num: i64, den: i64| S::from_ratio(num, den);
        let plain = |own: S, kind| NodeCost { child_weights: vec![S::one(); n], own, kind };
        let size_of = |i: usize| -> Result<u64, CostError> {
            match &sizes[i] {
                Some(s) => self.eval(s),
                None => Err(CostError::UnresolvedDimension(format!("size operand of {}", op.label()))),
            }
        };
        Ok(match op {
            Op::Var(_) | Op::NumLit(_) | Op::SizeLit(_) | Op::SizeParam(_) | Op::Input(_) => {
                plain(one(), Attribution::Leaf)
            }
            Op::Build => {
                let len = int(size_of(0)?);
                NodeCost { child_weights: vec![S::zero(), len.clone()], own: len + one(), kind: Attribution::Compute }
            }
            Op::IFold => {
                let len = int(size_of(0)?);
                NodeCost { child_weights: vec![S::zero(), one(), len], own: one(), kind: Attribution::Compute }
            }
            Op::Lambda | Op::App | Op::Index | Op::Tuple | Op::Fst | Op::Snd => plain(one(), Attribution::Compute),
            Op::Call(f) if !f.is_library() => plain(one(), Attribution::Compute),
            Op::Call(f) => {
                if !self.target.provides(f) {
                    return Err(CostError::NotInTarget(f.name()));
                }
                let name = f.name();
                let lib = |own: S| NodeCost { child_weights: vec![S::one(); n], own, kind: Attribution::Library };
                match f {
                    Func::Memset | Func::Full => {
                        let len = int(size_of(1)?);
                        NodeCost {
                            child_weights: vec![S::one(), S::zero()],
                            own: frac(4, 5) * len + one(),
                            kind: Attribution::Library,
                        }
                    }
                    Func::Dot | Func::Sum => lib(frac(4, 5) * int(self.vec_len(&sorts[0], &name)?)),
                    Func::Axpy => lib(frac(4, 5) * int(self.vec_len(&sorts[1], &name)?)),
                    Func::Gemv(_) => {
                        let (r, c) = self.mat_dims(&sorts[1], &name)?;
                        lib(frac(7, 10) * int(r) * int(c))
                    }
                    Func::Gemm(ta, tb) => {
                        let (ar, ac) = self.mat_dims(&sorts[1], &name)?;
                        let (br, bc) = self.mat_dims(&sorts[2], &name)?;
                        let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                        let n2 = if *tb { br } else { bc };
                        lib(frac(3, 5) * int(m) * int(k) * int(n2))
                    }
                    Func::Transpose => {
                        let (r, c) = self.mat_dims(&sorts[0], &name)?;
                        lib(frac(9, 10) * int(r) * int(c))
                    }
                    Func::Mv => {
                        let (r, c) = self.mat_dims(&sorts[0], &name)?;
                        lib(frac(7, 10) * int(r) * int(c))
                    }
                    Func::Mm => {
                        let (m, k) = self.mat_dims(&sorts[0], &name)?;
                        let (_, n2) = self.mat_dims(&sorts[1], &name)?;
                        lib(frac(3, 5) * int(m) * int(k) * int(n2))
                    }
                    Func::TAdd | Func::TMul => {
                        let a = self.elems(&sorts[0], &name)?;
                        let b = self.elems(&sorts[1], &name)?;
                        lib(frac(2, 5) * int(a) + frac(2, 5) * int(b))
                    }
                    Func::Add | Func::Mul | Func::Named(_) => unreachable!("not a library function"),
                }
            }
        })
    }

    /// Total cost of `e`, with inputs typed by `inputs`.
    pub fn cost<S: CostScalar>(&self, e: &Expr, inputs: &BTreeMap<Symbol, Sort>) -> Result<S, CostError> {
        Ok(self.breakdown::<S>(e, inputs)?.total())
    }

    /// Cost of `e` split by attribution.
    pub fn breakdown<S: CostScalar>(
        &self,
        e: &Expr,
        inputs: &BTreeMap<Symbol, Sort>,
    ) -> Result<Breakdown<S>, CostError> {
        Ok(self.walk(e, inputs)?.0)
    }

    fn walk<S: CostScalar>(
        &self,
        e: &Expr,
        inputs: &BTreeMap<Symbol, Sort>,
    ) -> Result<(Breakdown<S>, Sort, Option<SizeExpr>), CostError> {
        let (op, kids) = ENode::split(e);
        let mut parts = Vec::new();
        let mut sorts = Vec::new();
        let mut sizes = Vec::new();
        for k in kids {
            let (b, s, z) = self.walk::<S>(k, inputs)?;
            parts.push(b);
            sorts.push(s);
            sizes.push(z);
        }
        let sort = match &op {
            Op::Input(name) => inputs.get(name).cloned().unwrap_or(Sort::Unknown),
            _ => node_sort(&op, &sorts, &sizes).unwrap_or(Sort::Unknown),
        };
        let size = node_size(&op, &sizes);
        let nc = self.node_cost::<S>(&op, &sorts, &sizes)?;
        let mut out = Breakdown::zero();
        for (w, p) in nc.child_weights.iter().zip(parts) {
            out = out.plus(&p.scale(w));
        }
        out.add_own(nc.kind, nc.own);
        Ok((out, sort, size))
    }
}

/// Cost split into library-call terms, other computation, and leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakdown<S> {
    pub library: S,
    pub compute: S,
    pub leaf: S,
}

impl<S: CostScalar> Breakdown<S> {
    pub fn zero() -> Self {
        Breakdown { library: S::zero(), compute: S::zero(), leaf: S::zero() }
    }

    pub fn total(&self) -> S {
        self.library.clone() + self.compute.clone() + self.leaf.clone()
    }

    fn plus(&self, o: &Self) -> Self {
        Breakdown {
            library: self.library.clone() + o.library.clone(),
            compute: self.compute.clone() + o.compute.clone(),
            leaf: self.leaf.clone() + o.leaf.clone(),
        }
    }

    fn scale(&self, w: &S) -> Self {
        Breakdown {
            library: self.library.clone() * w.clone(),
            compute: self.compute.clone() * w.clone(),
            leaf: self.leaf.clone() * w.clone(),
        }
    }

    fn add_own(&mut self, kind: Attribution, own: S) {
        match kind {
            Attribution::Library => self.library = self.library.clone() + own,
            Attribution::Compute => self.compute = self.compute.clone() + own,
            Attribution::Leaf => self.leaf = self.leaf.clone() + own,
        }
    }

    /// Fraction of non-leaf work attributed to library calls.
    pub fn coverage(&self) -> f64 {
        let lib = self.library.to_f64();
        let denom = lib + self.compute.to_f64();
        if denom <= 0.0 {
            0.0
        } else {
            lib / denom
        }
    }
}

/// Static coverage of `e` under `model`: library-call cost over non-leaf cost.
pub fn static_coverage(e: &Expr, model: &CostModel, inputs: &BTreeMap<Symbol, Sort>) -> f64 {
    model.breakdown::<Ratio<i128>>(e, inputs).map(|b| b.coverage()).unwrap_or(0.0)
}

/// Library calls in `e`, by family name.
pub fn count_library_calls(e: &Expr) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    e.for_each_call(&mut |f, _| {
        if f.is_library() {
            *out.entry(f.family_name().to_string()).or_insert(0) += 1;
        }
    });
    out
}

/// Formats call counts like `2 × axpy, 1 × dot`.
pub fn format_calls(calls: &BTreeMap<String, usize>) -> String {
    calls.iter().map(|(k, v)| format!("{v} × {k}")).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_expr, sym};

    type R = Ratio<i128>;

    fn env(n: u64) -> SizeEnv {
        [(sym("N"), n)].into_iter().collect()
    }

    fn r(n: i128, d: i128) -> R {
        Ratio::new(n, d)
    }

    #[test]
    fn constant_costs_one() {
        let m = CostModel::new(Target::PureC, env(4));
        assert_eq!(m.cost::<R>(&Expr::num(42), &BTreeMap::new()).unwrap(), r(1, 1));
    }

    #[test]
    fn build_cost() {
        // f = (lam (+ %0 %0)) has cost 4
        let m = CostModel::new(Target::PureC, env(4));
        let e = parse_expr("(build #10 (lam (+ %0 %0)))").unwrap();
        assert_eq!(m.cost::<R>(&e, &BTreeMap::new()).unwrap(), r(10 * 5 + 1, 1));
    }

    #[test]
    fn dot_cost() {
        let m = CostModel::new(Target::Blas, env(100));
        let mut inputs = BTreeMap::new();
        inputs.insert(sym("a"), Sort::vector(SizeExpr::param(sym("N"))));
        inputs.insert(sym("b"), Sort::vector(SizeExpr::param(sym("N"))));
        let e = parse_expr("(call dot a b)").unwrap();
        assert_eq!(m.cost::<R>(&e, &inputs).unwrap(), r(82, 1));
        let pure = CostModel::new(Target::PureC, env(100));
        assert!(matches!(pure.cost::<R>(&e, &inputs), Err(CostError::NotInTarget(_))));
        let b = m.breakdown::<R>(&e, &inputs).unwrap();
        assert_eq!(b.coverage(), 1.0);
    }

    #[test]
    fn float_costs_agree() {
        let m = CostModel::new(Target::PureC, env(7));
        let e = parse_expr("(ifold N 0 (lam (lam (+ (idx xs %1) %0))))").unwrap();
        let exact = m.cost::<R>(&e, &BTreeMap::new()).unwrap();
        let float = m.cost::<f64>(&e, &BTreeMap::new()).unwrap();
        assert!((CostScalar::to_f64(&exact) - float).abs() < 1e-9);
    }

    #[test]
    fn call_counts() {
        let e = parse_expr("(call axpy a (call axpy b c (call memset 0 N)) (call dot x y))").unwrap();
        let calls = count_library_calls(&e);
        assert_eq!(format_calls(&calls), "2 × axpy, 1 × dot, 1 × memset");
        assert!(count_library_calls(&parse_expr("(+ a b)").unwrap()).is_empty());
    }
}
