//! The minimalist array IR: lambda calculus with De Bruijn indices, three
//! array primitives (`build`, indexing, `ifold`), binary tuples and named
//! function calls.

mod debruijn;
mod sort;
mod text;

use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;

pub use debruijn::{free_indices, shift, substitute, FreeSet, ShiftError};
pub use sort::{
    infer_sort, library_sort, sort_app, sort_build, sort_fst, sort_ifold, sort_index, sort_snd, SizeExpr, Sort,
    SortError,
};
pub(crate) use text::{is_ident, print_number, read_sexps, syntax_err, Pos, SExp};
pub use text::{parse_expr, parse_expr_in, parse_kernel, parse_sort, print_expr, print_kernel, print_sort, ParseError};

/// Interned-ish name used for inputs, size parameters and named functions.
pub type Symbol = Arc<str>;

pub fn sym(s: &str) -> Symbol {
    Arc::from(s)
}

/// Named functions. Library functions carry their flags structurally so
/// that idiom rules can flip them.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    /// Scalar (or size) addition, written infix as `+`.
    Add,
    /// Scalar (or size) multiplication, written infix as `*`.
    Mul,
    Dot,
    Axpy,
    /// `gemv_X`; the flag is `true` when the matrix is transposed.
    Gemv(bool),
    /// `gemm_XY`; flags for the first and second matrix.
    Gemm(bool, bool),
    Transpose,
    /// `memset(c, N)`: a length-`N` vector filled with `c` (only zero is used).
    Memset,
    Sum,
    Mv,
    Mm,
    /// PyTorch's polymorphic `add`.
    TAdd,
    /// PyTorch's polymorphic `mul`.
    TMul,
    /// `full(c, N)`: a length-`N` vector filled with `c`.
    Full,
    /// Any other named function (uninterpreted unless the interpreter knows it).
    Named(Symbol),
}

fn flag(b: bool) -> char {
    if b {
        'T'
    } else {
        'F'
    }
}

impl Func {
    pub fn from_name(name: &str) -> Func {
        match name {
            "+" => Func::Add,
            "*" => Func::Mul,
            "dot" => Func::Dot,
            "axpy" => Func::Axpy,
            "gemv_F" => Func::Gemv(false),
            "gemv_T" => Func::Gemv(true),
            "gemm_FF" => Func::Gemm(false, false),
            "gemm_FT" => Func::Gemm(false, true),
            "gemm_TF" => Func::Gemm(true, false),
            "gemm_TT" => Func::Gemm(true, true),
            "transpose" => Func::Transpose,
            "memset" => Func::Memset,
            "sum" => Func::Sum,
            "mv" => Func::Mv,
            "mm" => Func::Mm,
            "add" => Func::TAdd,
            "mul" => Func::TMul,
            "full" => Func::Full,
            other => Func::Named(sym(other)),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Func::Add => "+".into(),
            Func::Mul => "*".into(),
            Func::Dot => "dot".into(),
            Func::Axpy => "axpy".into(),
            Func::Gemv(t) => format!("gemv_{}", flag(*t)),
            Func::Gemm(a, b) => format!("gemm_{}{}", flag(*a), flag(*b)),
            Func::Transpose => "transpose".into(),
            Func::Memset => "memset".into(),
            Func::Sum => "sum".into(),
            Func::Mv => "mv".into(),
            Func::Mm => "mm".into(),
            Func::TAdd => "add".into(),
            Func::TMul => "mul".into(),
            Func::Full => "full".into(),
            Func::Named(s) => s.to_string(),
        }
    }

    /// The name used when counting library calls (flags dropped).
    pub fn family_name(&self) -> &str {
        match self {
            Func::Gemv(_) => "gemv",
            Func::Gemm(..) => "gemm",
            Func::Add => "+",
            Func::Mul => "*",
            Func::Dot => "dot",
            Func::Axpy => "axpy",
            Func::Transpose => "transpose",
            Func::Memset => "memset",
            Func::Sum => "sum",
            Func::Mv => "mv",
            Func::Mm => "mm",
            Func::TAdd => "add",
            Func::TMul => "mul",
            Func::Full => "full",
            Func::Named(s) => s,
        }
    }

    pub fn is_blas(&self) -> bool {
        matches!(self, Func::Dot | Func::Axpy | Func::Gemv(_) | Func::Gemm(..) | Func::Transpose | Func::Memset)
    }

    pub fn is_pytorch(&self) -> bool {
        matches!(
            self,
            Func::Dot | Func::Sum | Func::Mv | Func::Mm | Func::Transpose | Func::TAdd | Func::TMul | Func::Full
        )
    }

    pub fn is_library(&self) -> bool {
        self.is_blas() || self.is_pytorch()
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// An IR term. Terms are immutable values with structural equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Lambda(Box<Expr>),
    App(Box<Expr>, Box<Expr>),
    /// De Bruijn index.
    Var(u32),
    Build(Box<Expr>, Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    IFold(Box<Expr>, Box<Expr>, Box<Expr>),
    Tuple(Box<Expr>, Box<Expr>),
    Fst(Box<Expr>),
    Snd(Box<Expr>),
    Call(Func, Vec<Expr>),
    SizeLit(u64),
    SizeParam(Symbol),
    NumLit(Rational64),
    /// A named kernel input.
    Input(Symbol),
}

impl Expr {
    pub fn lam(body: Expr) -> Expr {
        Expr::Lambda(Box::new(body))
    }
    pub fn app(f: Expr, x: Expr) -> Expr {
        Expr::App(Box::new(f), Box::new(x))
    }
    pub fn build(n: Expr, f: Expr) -> Expr {
        Expr::Build(Box::new(n), Box::new(f))
    }
    pub fn index(a: Expr, i: Expr) -> Expr {
        Expr::Index(Box::new(a), Box::new(i))
    }
    pub fn ifold(n: Expr, init: Expr, f: Expr) -> Expr {
        Expr::IFold(Box::new(n), Box::new(init), Box::new(f))
    }
    pub fn tuple(a: Expr, b: Expr) -> Expr {
        Expr::Tuple(Box::new(a), Box::new(b))
    }
    pub fn fst(e: Expr) -> Expr {
        Expr::Fst(Box::new(e))
    }
    pub fn snd(e: Expr) -> Expr {
        Expr::Snd(Box::new(e))
    }
    pub fn call(f: Func, args: Vec<Expr>) -> Expr {
        Expr::Call(f, args)
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Call(Func::Add, vec![a, b])
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Call(Func::Mul, vec![a, b])
    }
    pub fn num(n: i64) -> Expr {
        Expr::NumLit(Rational64::from_integer(n))
    }
    pub fn input(name: &str) -> Expr {
        Expr::Input(sym(name))
    }
    pub fn size(name: &str) -> Expr {
        Expr::SizeParam(sym(name))
    }

    /// Immediate subterms, in order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Lambda(e) | Expr::Fst(e) | Expr::Snd(e) => vec![e],
            Expr::App(a, b) | Expr::Build(a, b) | Expr::Index(a, b) | Expr::Tuple(a, b) => {
                vec![a, b]
            }
            Expr::IFold(a, b, c) => vec![a, b, c],
            Expr::Call(_, args) => args.iter().collect(),
            Expr::Var(_) | Expr::SizeLit(_) | Expr::SizeParam(_) | Expr::NumLit(_) | Expr::Input(_) => vec![],
        }
    }

    /// Number of AST nodes.
    pub fn size_of(&self) -> usize {
        1 + self.children().iter().map(|c| c.size_of()).sum::<usize>()
    }

    /// Visits every call in the term.
    pub fn for_each_call(&self, f: &mut impl FnMut(&Func, &[Expr])) {
        if let Expr::Call(func, args) = self {
            f(func, args);
        }
        for c in self.children() {
            c.for_each_call(f);
        }
    }

    /// Inputs referenced by the term, in first-occurrence order.
    pub fn inputs(&self) -> Vec<Symbol> {
        fn go(e: &Expr, out: &mut Vec<Symbol>) {
            if let Expr::Input(s) = e {
                if !out.contains(s) {
                    out.push(s.clone());
                }
            }
            for c in e.children() {
                go(c, out);
            }
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self))
    }
}

/// A kernel: named inputs with sorts, size parameters with defaults, and a
/// body that is closed under the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDef {
    pub name: Symbol,
    pub params: Vec<(Symbol, Sort)>,
    pub sizes: Vec<SizeDecl>,
    pub body: Expr,
}

/// A size parameter. `default` drives the cost model; `test` is the small
/// value used when the kernel is executed by the interpreter or compiled C.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SizeDecl {
    pub name: Symbol,
    pub default: u64,
    pub test: u64,
}

impl KernelDef {
    pub fn param_sort(&self, name: &str) -> Option<&Sort> {
        self.params.iter().find(|(n, _)| &**n == name).map(|(_, s)| s)
    }

    /// Parameter sorts keyed by name.
    pub fn input_sorts(&self) -> std::collections::BTreeMap<Symbol, Sort> {
        self.params.iter().cloned().collect()
    }

    pub fn default_sizes(&self) -> SizeEnv {
        self.sizes.iter().map(|s| (s.name.clone(), s.default)).collect()
    }

    pub fn test_sizes(&self) -> SizeEnv {
        self.sizes.iter().map(|s| (s.name.clone(), s.test)).collect()
    }

    /// Sort of the body given the parameter sorts.
    pub fn result_sort(&self) -> Result<Sort, SortError> {
        let inputs = self.params.iter().cloned().collect();
        infer_sort(&self.body, &[], &inputs)
    }
}

/// Values for size parameters.
pub type SizeEnv = std::collections::BTreeMap<Symbol, u64>;
