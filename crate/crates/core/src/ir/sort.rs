use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Expr, Func, SizeEnv, Symbol};

/// A symbolic array length: a sum of size parameters plus a constant.
/// The parameter list is kept sorted so that equal sums compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SizeExpr {
    params: Vec<Symbol>,
    constant: u64,
}

impl SizeExpr {
    pub fn lit(n: u64) -> SizeExpr {
        SizeExpr { params: Vec::new(), constant: n }
    }

    pub fn param(name: Symbol) -> SizeExpr {
        SizeExpr { params: vec![name], constant: 0 }
    }

    pub fn plus(&self, other: &SizeExpr) -> SizeExpr {
        let mut params = self.params.clone();
        params.extend(other.params.iter().cloned());
        params.sort();
        SizeExpr { params, constant: self.constant + other.constant }
    }

    pub fn params(&self) -> &[Symbol] {
        &self.params
    }

    pub fn constant(&self) -> u64 {
        self.constant
    }

    /// The value under `env`, if every parameter is bound.
    pub fn eval(&self, env: &SizeEnv) -> Option<u64> {
        let mut total = self.constant;
        for p in &self.params {
            total += env.get(p)?;
        }
        Some(total)
    }

    /// The size expression denoted by a size-valued term, if it is built from
    /// literals, parameters and `+`.
    pub fn of_expr(e: &Expr) -> Option<SizeExpr> {
        match e {
            Expr::SizeLit(n) => Some(SizeExpr::lit(*n)),
            Expr::SizeParam(p) => Some(SizeExpr::param(p.clone())),
            Expr::Call(Func::Add, args) if args.len() == 2 => {
                Some(SizeExpr::of_expr(&args[0])?.plus(&SizeExpr::of_expr(&args[1])?))
            }
            _ => None,
        }
    }

    /// Canonical term for this size.
    pub fn to_expr(&self) -> Expr {
        let mut terms: Vec<Expr> = self.params.iter().map(|p| Expr::SizeParam(p.clone())).collect();
        if self.constant != 0 || terms.is_empty() {
            terms.push(Expr::SizeLit(self.constant));
        }
        let mut it = terms.into_iter();
        let first = it.next().expect("nonempty");
        it.fold(first, Expr::add)
    }
}

impl fmt::Display for SizeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::print_expr(&self.to_expr()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    Float,
    Size,
    Array(Box<Sort>, SizeExpr),
    Tuple(Box<Sort>, Box<Sort>),
    Fn(Box<Sort>, Box<Sort>),
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SortError {
    #[error("sort mismatch: {0}")]
    SortMismatch(String),
}

fn mismatch<T>(msg: impl Into<String>) -> Result<T, SortError> {
    Err(SortError::SortMismatch(msg.into()))
}

impl Sort {
    pub fn array(elem: Sort, dim: SizeExpr) -> Sort {
        Sort::Array(Box::new(elem), dim)
    }

    pub fn vector(dim: SizeExpr) -> Sort {
        Sort::array(Sort::Float, dim)
    }

    pub fn matrix(rows: SizeExpr, cols: SizeExpr) -> Sort {
        Sort::array(Sort::vector(cols), rows)
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, Sort::Unknown)
    }

    /// Most specific common sort, or `None` if the two cannot describe the
    /// same value.
    pub fn unify(&self, other: &Sort) -> Option<Sort> {
        match (self, other) {
            (Sort::Unknown, s) | (s, Sort::Unknown) => Some(s.clone()),
            (Sort::Float, Sort::Float) => Some(Sort::Float),
            (Sort::Size, Sort::Size) => Some(Sort::Size),
            (Sort::Array(a, n), Sort::Array(b, m)) if n == m => Some(Sort::array(a.unify(b)?, n.clone())),
            (Sort::Tuple(a1, b1), Sort::Tuple(a2, b2)) => {
                Some(Sort::Tuple(Box::new(a1.unify(a2)?), Box::new(b1.unify(b2)?)))
            }
            (Sort::Fn(a1, b1), Sort::Fn(a2, b2)) => Some(Sort::Fn(Box::new(a1.unify(a2)?), Box::new(b1.unify(b2)?))),
            _ => None,
        }
    }

    pub fn compatible(&self, other: &Sort) -> bool {
        self.unify(other).is_some()
    }

    /// `(rows, cols)` of a matrix sort. `Ok(None)` when the sort is not known
    /// precisely enough to tell.
    fn as_matrix(&self, what: &str) -> Result<Option<(SizeExpr, SizeExpr)>, SortError> {
        match self {
            Sort::Unknown => Ok(None),
            Sort::Array(row, n) => match &**row {
                Sort::Unknown => Ok(None),
                Sort::Array(e, m) if e.compatible(&Sort::Float) => Ok(Some((n.clone(), m.clone()))),
                _ => mismatch(format!("{what}: expected a matrix, got {self}")),
            },
            _ => mismatch(format!("{what}: expected a matrix, got {self}")),
        }
    }

    fn as_vector(&self, what: &str) -> Result<Option<SizeExpr>, SortError> {
        match self {
            Sort::Unknown => Ok(None),
            Sort::Array(e, n) if e.compatible(&Sort::Float) => Ok(Some(n.clone())),
            _ => mismatch(format!("{what}: expected a vector, got {self}")),
        }
    }

    fn expect_scalar(&self, what: &str) -> Result<(), SortError> {
        match self {
            Sort::Unknown | Sort::Float | Sort::Size => Ok(()),
            _ => mismatch(format!("{what}: expected a scalar, got {self}")),
        }
    }

    /// Product of all array dimensions (1 for scalars).
    pub fn element_count(&self, env: &SizeEnv) -> Option<u64> {
        match self {
            Sort::Array(e, n) => Some(n.eval(env)? * e.element_count(env)?),
            Sort::Float | Sort::Size => Some(1),
            _ => None,
        }
    }

    /// Array dimensions from outermost inward.
    pub fn dims(&self) -> Vec<SizeExpr> {
        let mut out = Vec::new();
        let mut s = self;
        while let Sort::Array(e, n) = s {
            out.push(n.clone());
            s = e;
        }
        out
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::print_sort(self))
    }
}

fn same_dim(a: &SizeExpr, b: &SizeExpr, what: &str) -> Result<(), SortError> {
    if a == b {
        Ok(())
    } else {
        mismatch(format!("{what}: dimension {a} does not match {b}"))
    }
}

fn unify_or(a: &Sort, b: &Sort, what: &str) -> Result<Sort, SortError> {
    a.unify(b).map_or_else(|| mismatch(format!("{what}: {a} vs {b}")), Ok)
}

pub fn sort_app(f: &Sort) -> Result<Sort, SortError> {
    match f {
        Sort::Fn(_, r) => Ok((**r).clone()),
        Sort::Unknown => Ok(Sort::Unknown),
        _ => mismatch(format!("applying a non-function of sort {f}")),
    }
}

pub fn sort_build(dim: Option<&SizeExpr>, size: &Sort, f: &Sort) -> Result<Sort, SortError> {
    if !size.compatible(&Sort::Size) {
        return mismatch(format!("build size has sort {size}"));
    }
    let elem = sort_app(f)?;
    Ok(match dim {
        Some(d) => Sort::array(elem, d.clone()),
        None => Sort::Unknown,
    })
}

pub fn sort_index(a: &Sort, i: &Sort) -> Result<Sort, SortError> {
    if !i.compatible(&Sort::Size) {
        return mismatch(format!("index has sort {i}"));
    }
    match a {
        Sort::Array(e, _) => Ok((**e).clone()),
        Sort::Unknown => Ok(Sort::Unknown),
        _ => mismatch(format!("indexing a value of sort {a}")),
    }
}

pub fn sort_ifold(size: &Sort, init: &Sort, f: &Sort) -> Result<Sort, SortError> {
    if !size.compatible(&Sort::Size) {
        return mismatch(format!("ifold size has sort {size}"));
    }
    let step = sort_app(&sort_app(f)?)?;
    unify_or(init, &step, "ifold accumulator")
}

pub fn sort_fst(t: &Sort) -> Result<Sort, SortError> {
    match t {
        Sort::Tuple(a, _) => Ok((**a).clone()),
        Sort::Unknown => Ok(Sort::Unknown),
        _ => mismatch(format!("fst of {t}")),
    }
}

pub fn sort_snd(t: &Sort) -> Result<Sort, SortError> {
    match t {
        Sort::Tuple(_, b) => Ok((**b).clone()),
        Sort::Unknown => Ok(Sort::Unknown),
        _ => mismatch(format!("snd of {t}")),
    }
}

/// Result sort of a named call. `sizes[i]` is the size value of argument
/// `i` when it is a size term (used by `memset` and `full`).
pub fn library_sort(f: &Func, args: &[Sort], sizes: &[Option<SizeExpr>]) -> Result<Sort, SortError> {
    let arity = |n: usize| -> Result<(), SortError> {
        if args.len() == n {
            Ok(())
        } else {
            mismatch(format!("{f} expects {n} arguments, got {}", args.len()))
        }
    };
    let name = f.name();
    match f {
        Func::Add | Func::Mul => {
            arity(2)?;
            match (&args[0], &args[1]) {
                (Sort::Size, Sort::Size) => Ok(Sort::Size),
                (a, b) => {
                    a.expect_scalar(&name)?;
                    b.expect_scalar(&name)?;
                    if *a == Sort::Float || *b == Sort::Float {
                        Ok(Sort::Float)
                    } else {
                        Ok(Sort::Unknown)
                    }
                }
            }
        }
        Func::Dot => {
            arity(2)?;
            if let (Some(n), Some(m)) = (args[0].as_vector(&name)?, args[1].as_vector(&name)?) {
                same_dim(&n, &m, &name)?;
            }
            Ok(Sort::Float)
        }
        Func::Sum => {
            arity(1)?;
            args[0].as_vector(&name)?;
            Ok(Sort::Float)
        }
        Func::Axpy => {
            arity(3)?;
            args[0].expect_scalar(&name)?;
            args[1].as_vector(&name)?;
            args[2].as_vector(&name)?;
            unify_or(&args[1], &args[2], &name)
        }
        Func::Gemv(t) => {
            arity(5)?;
            args[0].expect_scalar(&name)?;
            args[3].expect_scalar(&name)?;
            let x = args[2].as_vector(&name)?;
            let c = args[4].as_vector(&name)?;
            if let Some((r, k)) = args[1].as_matrix(&name)? {
                let (rows, cols) = if *t { (k, r) } else { (r, k) };
                if let Some(x) = x {
                    same_dim(&cols, &x, &name)?;
                }
                if let Some(c) = c {
                    same_dim(&rows, &c, &name)?;
                }
                return Ok(Sort::vector(rows));
            }
            Ok(args[4].clone())
        }
        Func::Gemm(ta, tb) => {
            arity(5)?;
            args[0].expect_scalar(&name)?;
            args[3].expect_scalar(&name)?;
            let a = args[1].as_matrix(&name)?.map(|(r, c)| if *ta { (c, r) } else { (r, c) });
            let b = args[2].as_matrix(&name)?.map(|(r, c)| if *tb { (c, r) } else { (r, c) });
            let c = args[4].as_matrix(&name)?;
            if let (Some((_, k1)), Some((k2, _))) = (&a, &b) {
                same_dim(k1, k2, &name)?;
            }
            if let (Some((m, _)), Some((cm, _))) = (&a, &c) {
                same_dim(m, cm, &name)?;
            }
            if let (Some((_, n)), Some((_, cn))) = (&b, &c) {
                same_dim(n, cn, &name)?;
            }
            match (a, b) {
                (Some((m, _)), Some((_, n))) => Ok(Sort::matrix(m, n)),
                _ => Ok(args[4].clone()),
            }
        }
        Func::Transpose => {
            arity(1)?;
            match &args[0] {
                Sort::Unknown => Ok(Sort::Unknown),
                Sort::Array(row, n) => match &**row {
                    Sort::Unknown => Ok(Sort::Unknown),
                    Sort::Array(e, m) => Ok(Sort::array(Sort::array((**e).clone(), n.clone()), m.clone())),
                    _ => mismatch(format!("transpose of {}", args[0])),
                },
                s => mismatch(format!("transpose of {s}")),
            }
        }
        Func::Memset | Func::Full => {
            arity(2)?;
            args[0].expect_scalar(&name)?;
            if !args[1].compatible(&Sort::Size) {
                return mismatch(format!("{name} length has sort {}", args[1]));
            }
            let elem = if args[0] == Sort::Size { Sort::Size } else { Sort::Float };
            Ok(match sizes.get(1).cloned().flatten() {
                Some(n) => Sort::array(elem, n),
                None => Sort::Unknown,
            })
        }
        Func::Mv => {
            arity(2)?;
            let x = args[1].as_vector(&name)?;
            match args[0].as_matrix(&name)? {
                Some((r, k)) => {
                    if let Some(x) = x {
                        same_dim(&k, &x, &name)?;
                    }
                    Ok(Sort::vector(r))
                }
                None => Ok(Sort::Unknown),
            }
        }
        Func::Mm => {
            arity(2)?;
            match (args[0].as_matrix(&name)?, args[1].as_matrix(&name)?) {
                (Some((m, k1)), Some((k2, n))) => {
                    same_dim(&k1, &k2, &name)?;
                    Ok(Sort::matrix(m, n))
                }
                _ => Ok(Sort::Unknown),
            }
        }
        Func::TAdd | Func::TMul => {
            arity(2)?;
            let scalar = |s: &Sort| matches!(s, Sort::Float | Sort::Size);
            match (&args[0], &args[1]) {
                (a, b) if scalar(a) && scalar(b) => Ok(Sort::Float),
                (a, b) if scalar(a) => Ok(b.clone()),
                (a, b) if scalar(b) => Ok(a.clone()),
                (Sort::Unknown, _) | (_, Sort::Unknown) => Ok(Sort::Unknown),
                (a @ Sort::Array(..), b @ Sort::Array(..)) => unify_or(a, b, &name),
                (a, b) => mismatch(format!("{name} of {a} and {b}")),
            }
        }
        Func::Named(_) => Ok(Sort::Unknown),
    }
}

/// Best-effort sort of `e`. `env[i]` is the sort of free index `%i`;
/// missing entries are `Unknown`. `inputs` gives the sorts of named inputs.
pub fn infer_sort(e: &Expr, env: &[Sort], inputs: &BTreeMap<Symbol, Sort>) -> Result<Sort, SortError> {
    let mut stack: Vec<Sort> = env.iter().rev().cloned().collect();
    infer(e, &mut stack, inputs)
}

// `stack` holds binder sorts with the innermost binder last.
fn infer(e: &Expr, stack: &mut Vec<Sort>, inputs: &BTreeMap<Symbol, Sort>) -> Result<Sort, SortError> {
    match e {
        Expr::Var(i) => {
            let i = *i as usize;
            Ok(if i < stack.len() { stack[stack.len() - 1 - i].clone() } else { Sort::Unknown })
        }
        Expr::NumLit(_) => Ok(Sort::Float),
        Expr::SizeLit(_) | Expr::SizeParam(_) => Ok(Sort::Size),
        Expr::Input(name) => Ok(inputs.get(name).cloned().unwrap_or(Sort::Unknown)),
        Expr::Lambda(b) => {
            let body = under(b, Sort::Unknown, stack, inputs)?;
            Ok(Sort::Fn(Box::new(Sort::Unknown), Box::new(body)))
        }
        Expr::App(f, x) => {
            let xs = infer(x, stack, inputs)?;
            match &**f {
                Expr::Lambda(b) => under(b, xs, stack, inputs),
                _ => sort_app(&infer(f, stack, inputs)?),
            }
        }
        Expr::Build(n, f) => {
            let ns = infer(n, stack, inputs)?;
            let fs = lambda_sort(f, &[Sort::Size], stack, inputs)?;
            sort_build(SizeExpr::of_expr(n).as_ref(), &ns, &fs)
        }
        Expr::Index(a, i) => {
            let a = infer(a, stack, inputs)?;
            let i = infer(i, stack, inputs)?;
            sort_index(&a, &i)
        }
        Expr::IFold(n, init, f) => {
            let ns = infer(n, stack, inputs)?;
            let is = infer(init, stack, inputs)?;
            let fs = lambda_sort(f, &[Sort::Size, is.clone()], stack, inputs)?;
            sort_ifold(&ns, &is, &fs)
        }
        Expr::Tuple(a, b) => Ok(Sort::Tuple(Box::new(infer(a, stack, inputs)?), Box::new(infer(b, stack, inputs)?))),
        Expr::Fst(t) => sort_fst(&infer(t, stack, inputs)?),
        Expr::Snd(t) => sort_snd(&infer(t, stack, inputs)?),
        Expr::Call(f, args) => {
            let sorts = args.iter().map(|a| infer(a, stack, inputs)).collect::<Result<Vec<_>, _>>()?;
            let sizes: Vec<_> = args.iter().map(SizeExpr::of_expr).collect();
            library_sort(f, &sorts, &sizes)
        }
    }
}

fn under(body: &Expr, binder: Sort, stack: &mut Vec<Sort>, inputs: &BTreeMap<Symbol, Sort>) -> Result<Sort, SortError> {
    stack.push(binder);
    let r = infer(body, stack, inputs);
    stack.pop();
    r
}

/// Sort of a function argument whose parameters are known to have the sorts
/// in `params` (outermost first), peeling syntactic lambdas.
fn lambda_sort(
    f: &Expr,
    params: &[Sort],
    stack: &mut Vec<Sort>,
    inputs: &BTreeMap<Symbol, Sort>,
) -> Result<Sort, SortError> {
    match (f, params.split_first()) {
        (Expr::Lambda(b), Some((p, rest))) => {
            stack.push(p.clone());
            let r = lambda_sort(b, rest, stack, inputs);
            stack.pop();
            Ok(Sort::Fn(Box::new(p.clone()), Box::new(r?)))
        }
        _ => infer(f, stack, inputs),
    }
}
