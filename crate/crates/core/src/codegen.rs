//! C emission for extracted solutions.
//!
//! Arrays are flat row-major `double` buffers. Array-valued terms are written
//! into a destination buffer; indexing into a `build` is inlined rather than
//! materializing the array. BLAS functions become CBLAS calls and the tensor
//! functions become plain loops.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::interp::Value;
use crate::ir::{Expr, Func, KernelDef, SizeEnv, SizeExpr, Sort, Symbol};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("cannot emit C for {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("C compiler failed:\n{0}")]
    Compile(String),
    #[error("program failed: {0}")]
    Run(String),
}

fn unsupported<T>(what: impl Into<String>) -> Result<T, CodegenError> {
    Err(CodegenError::Unsupported(what.into()))
}

/// Naive row-major implementations of the CBLAS calls the emitter uses.
pub const FALLBACK_BLAS_H: &str = r#"#ifndef FALLBACK_BLAS_H
#define FALLBACK_BLAS_H

enum CBLAS_ORDER { CblasRowMajor = 101, CblasColMajor = 102 };
enum CBLAS_TRANSPOSE { CblasNoTrans = 111, CblasTrans = 112 };

static inline double cblas_ddot(int n, const double *x, int incx, const double *y, int incy) {
    double acc = 0.0;
    for (int i = 0; i < n; i++) acc += x[i * incx] * y[i * incy];
    return acc;
}

static inline void cblas_dcopy(int n, const double *x, int incx, double *y, int incy) {
    for (int i = 0; i < n; i++) y[i * incy] = x[i * incx];
}

static inline void cblas_daxpy(int n, double a, const double *x, int incx, double *y, int incy) {
    for (int i = 0; i < n; i++) y[i * incy] += a * x[i * incx];
}

/* Row-major only. */
static inline void cblas_dgemv(enum CBLAS_ORDER order, enum CBLAS_TRANSPOSE trans, int m, int n, double alpha,
                               const double *a, int lda, const double *x, int incx, double beta, double *y,
                               int incy) {
    (void)order;
    int rows = trans == CblasNoTrans ? m : n;
    int inner = trans == CblasNoTrans ? n : m;
    for (int i = 0; i < rows; i++) {
        double acc = 0.0;
        for (int k = 0; k < inner; k++) {
            double aik = trans == CblasNoTrans ? a[i * lda + k] : a[k * lda + i];
            acc += aik * x[k * incx];
        }
        y[i * incy] = alpha * acc + beta * y[i * incy];
    }
}

/* Row-major only. */
static inline void cblas_dgemm(enum CBLAS_ORDER order, enum CBLAS_TRANSPOSE ta, enum CBLAS_TRANSPOSE tb, int m, int n,
                               int k, double alpha, const double *a, int lda, const double *b, int ldb, double beta,
                               double *c, int ldc) {
    (void)order;
    for (int i = 0; i < m; i++) {
        for (int j = 0; j < n; j++) {
            double acc = 0.0;
            for (int p = 0; p < k; p++) {
                double aip = ta == CblasNoTrans ? a[i * lda + p] : a[p * lda + i];
                double bpj = tb == CblasNoTrans ? b[p * ldb + j] : b[j * ldb + p];
                acc += aip * bpj;
            }
            c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
        }
    }
}

#endif
"#;

/// A strided-free view: `ptr` addresses a contiguous row-major block with the
/// given dimensions (outermost first).
#[derive(Clone, Debug)]
struct View {
    ptr: String,
    dims: Vec<String>,
}

impl View {
    fn count(&self) -> String {
        product(&self.dims)
    }

    fn stride(&self) -> String {
        product(&self.dims[1..])
    }

    /// Row `i`, or the element lvalue when this is a vector.
    fn at(&self, i: &str) -> Result<CVal, CodegenError> {
        match self.dims.len() {
            0 => unsupported("indexing a scalar"),
            1 => Ok(CVal::Scalar(format!("{}[{i}]", self.ptr))),
            _ => Ok(CVal::Array(View {
                ptr: format!("({} + ({i}) * {})", self.ptr, self.stride()),
                dims: self.dims[1..].to_vec(),
            })),
        }
    }
}

fn atom(d: &str) -> String {
    if d.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        d.to_string()
    } else {
        format!("({d})")
    }
}

fn product(dims: &[String]) -> String {
    if dims.is_empty() {
        "1".into()
    } else {
        dims.iter().map(|d| atom(d)).collect::<Vec<_>>().join(" * ")
    }
}

#[derive(Clone, Debug)]
enum CVal {
    /// A C expression of type `double` or `long`.
    Scalar(String),
    Array(View),
    Tuple(Box<CVal>, Box<CVal>),
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Scalar,
    Array(Vec<String>),
    Tuple(Box<Shape>, Box<Shape>),
}

impl CVal {
    fn shape(&self) -> Shape {
        match self {
            CVal::Scalar(_) => Shape::Scalar,
            CVal::Array(v) => Shape::Array(v.dims.clone()),
            CVal::Tuple(a, b) => Shape::Tuple(Box::new(a.shape()), Box::new(b.shape())),
        }
    }

    fn scalar(self) -> Result<String, CodegenError> {
        match self {
            CVal::Scalar(s) => Ok(s),
            other => unsupported(format!("expected a scalar, got {:?}", other.shape())),
        }
    }

    fn view(self) -> Result<View, CodegenError> {
        match self {
            CVal::Array(v) => Ok(v),
            other => unsupported(format!("expected an array, got {:?}", other.shape())),
        }
    }
}

fn size_c(s: &SizeExpr) -> String {
    let mut terms: Vec<String> = s.params().iter().map(|p| p.to_string()).collect();
    if s.constant() != 0 || terms.is_empty() {
        terms.push(s.constant().to_string());
    }
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        format!("({})", terms.join(" + "))
    }
}

const RESERVED: [&str; 12] =
    ["out", "out0", "out1", "kernel", "main", "double", "long", "int", "for", "if", "return", "sum"];

/// C identifier for a kernel input.
fn c_name(name: &str, sizes: &BTreeSet<String>) -> String {
    let plain = name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && !RESERVED.contains(&name)
        && !sizes.contains(name)
        && !generated(name);
    if plain {
        name.to_string()
    } else {
        format!("in_{}", name.replace(|c: char| !c.is_ascii_alphanumeric(), "_"))
    }
}

/// Names of the form `[itas]<digits>` are used for generated locals.
fn generated(name: &str) -> bool {
    let mut cs = name.chars();
    matches!(cs.next(), Some('i' | 't' | 'a' | 's'))
        && !name[1..].is_empty()
        && name[1..].chars().all(|c| c.is_ascii_digit())
}

struct Gen {
    body: String,
    depth: usize,
    fresh: usize,
    scopes: Vec<Vec<String>>,
    inputs: BTreeMap<Symbol, CVal>,
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::NumLit(r) if *r.numer() == 0)
}

fn lambda_body(f: &Expr, what: &str) -> Result<Expr, CodegenError> {
    match f {
        Expr::Lambda(b) => Ok((**b).clone()),
        _ => unsupported(format!("{what} of a non-lambda")),
    }
}

impl Gen {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.body.push_str("    ");
        }
        self.body.push_str(s);
        self.body.push('\n');
    }

    fn name(&mut self, prefix: char) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh - 1)
    }

    fn open(&mut self, header: &str) {
        self.line(&format!("{header} {{"));
        self.depth += 1;
        self.scopes.push(Vec::new());
    }

    fn close(&mut self) {
        for t in self.scopes.pop().unwrap_or_default().into_iter().rev() {
            self.line(&format!("free({t});"));
        }
        self.depth -= 1;
        self.line("}");
    }

    fn alloc(&mut self, dims: Vec<String>) -> View {
        let t = self.name('t');
        let v = View { ptr: t.clone(), dims };
        self.line(&format!("double *{t} = malloc((size_t)({}) * sizeof(double));", v.count()));
        self.scopes.last_mut().expect("inside a block").push(t);
        v
    }

    fn copy(&mut self, dest: &View, src: &View) {
        self.line(&format!("memcpy({}, {}, (size_t)({}) * sizeof(double));", dest.ptr, src.ptr, dest.count()));
    }

    fn shape(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<Shape, CodegenError> {
        Ok(match e {
            Expr::Var(i) => env
                .get(env.len().wrapping_sub(1 + *i as usize))
                .ok_or_else(|| CodegenError::Unsupported(format!("free %{i}")))?
                .shape(),
            Expr::NumLit(_) | Expr::SizeLit(_) | Expr::SizeParam(_) => Shape::Scalar,
            Expr::Input(n) => {
                self.inputs.get(n).ok_or_else(|| CodegenError::Unsupported(format!("input {n}")))?.shape()
            }
            Expr::Build(n, f) => {
                let b = lambda_body(f, "build")?;
                let n = self.size(n, env)?;
                env.push(CVal::Scalar("0".into()));
                let s = self.shape(&b, env);
                env.pop();
                let mut dims = vec![n];
                match s? {
                    Shape::Scalar => {}
                    Shape::Array(d) => dims.extend(d),
                    Shape::Tuple(..) => return unsupported("arrays of tuples"),
                }
                Shape::Array(dims)
            }
            Expr::Index(a, _) => match self.shape(a, env)? {
                Shape::Array(d) if d.len() == 1 => Shape::Scalar,
                Shape::Array(d) => Shape::Array(d[1..].to_vec()),
                s => return unsupported(format!("indexing {s:?}")),
            },
            Expr::IFold(_, init, _) => self.shape(init, env)?,
            Expr::App(f, x) => {
                let b = lambda_body(f, "application")?;
                let xs = self.shape(x, env)?;
                env.push(placeholder(&xs));
                let s = self.shape(&b, env);
                env.pop();
                s?
            }
            Expr::Tuple(a, b) => Shape::Tuple(Box::new(self.shape(a, env)?), Box::new(self.shape(b, env)?)),
            Expr::Fst(t) | Expr::Snd(t) => match self.shape(t, env)? {
                Shape::Tuple(a, b) => {
                    if matches!(e, Expr::Fst(_)) {
                        *a
                    } else {
                        *b
                    }
                }
                s => return unsupported(format!("projection of {s:?}")),
            },
            Expr::Lambda(_) => return unsupported("a first-class function"),
            Expr::Call(f, args) => self.call_shape(f, args, env)?,
        })
    }

    fn dims_of(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<Vec<String>, CodegenError> {
        match self.shape(e, env)? {
            Shape::Array(d) => Ok(d),
            s => unsupported(format!("expected an array, got {s:?}")),
        }
    }

    fn call_shape(&mut self, f: &Func, args: &[Expr], env: &mut Vec<CVal>) -> Result<Shape, CodegenError> {
        let arg = |i: usize| args.get(i).ok_or_else(|| CodegenError::Unsupported(format!("{} arity", f.name())));
        Ok(match f {
            Func::Add | Func::Mul | Func::Dot | Func::Sum => Shape::Scalar,
            Func::Axpy => self.shape(arg(2)?, env)?,
            Func::Gemv(t) => {
                let d = self.dims_of(arg(1)?, env)?;
                Shape::Array(vec![d[usize::from(*t)].clone()])
            }
            Func::Gemm(ta, tb) => {
                let a = self.dims_of(arg(1)?, env)?;
                let b = self.dims_of(arg(2)?, env)?;
                Shape::Array(vec![a[usize::from(*ta)].clone(), b[usize::from(!*tb)].clone()])
            }
            Func::Transpose => {
                let d = self.dims_of(arg(0)?, env)?;
                Shape::Array(vec![d[1].clone(), d[0].clone()])
            }
            Func::Memset | Func::Full => Shape::Array(vec![self.size(arg(1)?, env)?]),
            Func::Mv => Shape::Array(vec![self.dims_of(arg(0)?, env)?[0].clone()]),
            Func::Mm => {
                Shape::Array(vec![self.dims_of(arg(0)?, env)?[0].clone(), self.dims_of(arg(1)?, env)?[1].clone()])
            }
            Func::TAdd | Func::TMul => match (self.shape(arg(0)?, env)?, self.shape(arg(1)?, env)?) {
                (Shape::Scalar, s) | (s, Shape::Scalar) => s,
                (a, _) => a,
            },
            Func::Named(n) => return unsupported(format!("unknown function {n}")),
        })
    }

    /// C expression for a size-valued term, without emitting statements.
    fn size(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<String, CodegenError> {
        if let Some(s) = SizeExpr::of_expr(e) {
            return Ok(size_c(&s));
        }
        match e {
            Expr::Var(_) => self.value(e, env)?.scalar(),
            Expr::Call(Func::Add | Func::Mul, args) if args.len() == 2 => {
                let op = if matches!(e, Expr::Call(Func::Add, _)) { "+" } else { "*" };
                Ok(format!("({} {op} {})", self.size(&args[0], env)?, self.size(&args[1], env)?))
            }
            _ => unsupported(format!("size term {e}")),
        }
    }
}

fn placeholder(s: &Shape) -> CVal {
    match s {
        Shape::Scalar => CVal::Scalar("0".into()),
        Shape::Array(d) => CVal::Array(View { ptr: "0".into(), dims: d.clone() }),
        Shape::Tuple(a, b) => CVal::Tuple(Box::new(placeholder(a)), Box::new(placeholder(b))),
    }
}

impl Gen {
    fn scalar(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<String, CodegenError> {
        match e {
            Expr::NumLit(r) => {
                let lit = |n: i64| if n < 0 { format!("({n}.0)") } else { format!("{n}.0") };
                Ok(if *r.denom() == 1 {
                    lit(*r.numer())
                } else {
                    format!("({} / {})", lit(*r.numer()), lit(*r.denom()))
                })
            }
            Expr::SizeLit(_) | Expr::SizeParam(_) => self.size(e, env),
            Expr::Call(f @ (Func::Add | Func::Mul), args) if args.len() == 2 => {
                let a = self.scalar(&args[0], env)?;
                let b = self.scalar(&args[1], env)?;
                Ok(format!("({a} {} {b})", if *f == Func::Add { "+" } else { "*" }))
            }
            Expr::Call(f @ (Func::TAdd | Func::TMul), args) if args.len() == 2 => {
                let a = self.scalar(&args[0], env)?;
                let b = self.scalar(&args[1], env)?;
                Ok(format!("({a} {} {b})", if *f == Func::TAdd { "+" } else { "*" }))
            }
            Expr::Call(Func::Dot, args) if args.len() == 2 => {
                let x = self.view(&args[0], env)?;
                let y = self.view(&args[1], env)?;
                let s = self.name('s');
                self.line(&format!("double {s} = cblas_ddot((int)({}), {}, 1, {}, 1);", x.count(), x.ptr, y.ptr));
                Ok(s)
            }
            Expr::Call(Func::Sum, args) if args.len() == 1 => {
                let x = self.view(&args[0], env)?;
                let s = self.name('s');
                self.line(&format!("double {s} = 0.0;"));
                let i = self.name('i');
                self.open(&format!("for (long {i} = 0; {i} < {}; {i}++)", x.count()));
                self.line(&format!("{s} = {}[{i}] + {s};", x.ptr));
                self.close();
                Ok(s)
            }
            Expr::IFold(n, init, f) => {
                let body = lambda_body(&lambda_body(f, "ifold")?, "ifold")?;
                let n = self.size(n, env)?;
                let init = self.scalar(init, env)?;
                let a = self.name('a');
                self.line(&format!("double {a} = {init};"));
                let i = self.name('i');
                self.open(&format!("for (long {i} = 0; {i} < {n}; {i}++)"));
                env.push(CVal::Scalar(i));
                env.push(CVal::Scalar(a.clone()));
                let r = self.scalar(&body, env);
                env.truncate(env.len() - 2);
                let r = r?;
                self.line(&format!("{a} = {r};"));
                self.close();
                Ok(a)
            }
            Expr::Var(_) | Expr::Input(_) | Expr::Index(..) | Expr::App(..) | Expr::Fst(_) | Expr::Snd(_) => {
                self.value(e, env)?.scalar()
            }
            _ => unsupported(format!("scalar term {e}")),
        }
    }

    fn view(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<View, CodegenError> {
        self.value(e, env)?.view()
    }

    /// `e[idx[last]]...[idx[0]]`.
    fn at(&mut self, e: &Expr, idx: &mut Vec<String>, env: &mut Vec<CVal>) -> Result<CVal, CodegenError> {
        let Some(i) = idx.last().cloned() else {
            return self.value(e, env);
        };
        match e {
            Expr::Build(_, f) if matches!(&**f, Expr::Lambda(_)) => {
                let body = lambda_body(f, "build")?;
                idx.pop();
                env.push(CVal::Scalar(i.clone()));
                let r = self.at(&body, idx, env);
                env.pop();
                idx.push(i);
                r
            }
            Expr::Index(a, j) => {
                let j = self.scalar(j, env)?;
                idx.push(j);
                let r = self.at(a, idx, env);
                idx.pop();
                r
            }
            Expr::App(f, x) if matches!(&**f, Expr::Lambda(_)) => {
                let body = lambda_body(f, "application")?;
                let v = self.value(x, env)?;
                env.push(v);
                let r = self.at(&body, idx, env);
                env.pop();
                r
            }
            _ => {
                let mut v = self.value(e, env)?;
                for k in idx.iter().rev() {
                    v = v.view()?.at(k)?;
                }
                Ok(v)
            }
        }
    }

    fn value(&mut self, e: &Expr, env: &mut Vec<CVal>) -> Result<CVal, CodegenError> {
        match e {
            Expr::Var(i) => env
                .get(env.len().wrapping_sub(1 + *i as usize))
                .cloned()
                .ok_or_else(|| CodegenError::Unsupported(format!("free %{i}"))),
            Expr::Input(n) => {
                self.inputs.get(n).cloned().ok_or_else(|| CodegenError::Unsupported(format!("input {n}")))
            }
            Expr::Index(a, i) => {
                let i = self.scalar(i, env)?;
                self.at(a, &mut vec![i], env)
            }
            Expr::App(f, x) => {
                let body = lambda_body(f, "application")?;
                let v = self.value(x, env)?;
                env.push(v);
                let r = self.value(&body, env);
                env.pop();
                r
            }
            Expr::Tuple(a, b) => Ok(CVal::Tuple(Box::new(self.value(a, env)?), Box::new(self.value(b, env)?))),
            Expr::Fst(t) | Expr::Snd(t) => match self.value(t, env)? {
                CVal::Tuple(a, b) => Ok(if matches!(e, Expr::Fst(_)) { *a } else { *b }),
                other => unsupported(format!("projection of {:?}", other.shape())),
            },
            _ => match self.shape(e, env)? {
                Shape::Scalar => Ok(CVal::Scalar(self.scalar(e, env)?)),
                Shape::Array(dims) => {
                    let t = self.alloc(dims);
                    self.write_into(e, &t, env)?;
                    Ok(CVal::Array(t))
                }
                Shape::Tuple(..) => unsupported(format!("tuple term {e}")),
            },
        }
    }

    fn loop_over(&mut self, n: &str) -> String {
        let i = self.name('i');
        self.open(&format!("for (long {i} = 0; {i} < {n}; {i}++)"));
        i
    }

    /// Writes the array value of `e` into `dest`.
    fn write_into(&mut self, e: &Expr, dest: &View, env: &mut Vec<CVal>) -> Result<(), CodegenError> {
        match e {
            Expr::Build(n, f) => {
                let body = lambda_body(f, "build")?;
                let n = self.size(n, env)?;
                let i = self.loop_over(&n);
                env.push(CVal::Scalar(i.clone()));
                let r = match dest.at(&i)? {
                    CVal::Scalar(lv) => self.scalar(&body, env).map(|x| self.line(&format!("{lv} = {x};"))),
                    CVal::Array(sub) => self.write_into(&body, &sub, env),
                    CVal::Tuple(..) => unreachable!(),
                };
                env.pop();
                r?;
                self.close();
                Ok(())
            }
            Expr::IFold(n, init, f) => {
                let body = lambda_body(&lambda_body(f, "ifold")?, "ifold")?;
                let n = self.size(n, env)?;
                self.write_into(init, dest, env)?;
                let i = self.loop_over(&n);
                env.push(CVal::Scalar(i));
                env.push(CVal::Array(dest.clone()));
                let tmp = self.alloc(dest.dims.clone());
                let r = self.write_into(&body, &tmp, env);
                env.truncate(env.len() - 2);
                r?;
                self.copy(dest, &tmp);
                self.close();
                Ok(())
            }
            Expr::App(f, x) => {
                let body = lambda_body(f, "application")?;
                let v = self.value(x, env)?;
                env.push(v);
                let r = self.write_into(&body, dest, env);
                env.pop();
                r
            }
            Expr::Call(f, args) => self.call_into(f, args, dest, env),
            _ => {
                let src = self.view(e, env)?;
                self.copy(dest, &src);
                Ok(())
            }
        }
    }
}

impl Gen {
    fn call_into(&mut self, f: &Func, args: &[Expr], dest: &View, env: &mut Vec<CVal>) -> Result<(), CodegenError> {
        let want = match f {
            Func::Axpy => 3,
            Func::Gemv(_) | Func::Gemm(..) => 5,
            Func::Transpose => 1,
            Func::Memset | Func::Full | Func::Mv | Func::Mm | Func::TAdd | Func::TMul => 2,
            _ => return unsupported(format!("{} as an array", f.name())),
        };
        if args.len() != want {
            return unsupported(format!("{} with {} arguments", f.name(), args.len()));
        }
        let trans = |t: bool| if t { "CblasTrans" } else { "CblasNoTrans" };
        let d = &dest.ptr;
        match f {
            Func::Axpy => {
                let a = self.scalar(&args[0], env)?;
                let x = self.view(&args[1], env)?;
                let y = self.view(&args[2], env)?;
                let n = dest.count();
                self.line(&format!("cblas_dcopy((int)({n}), {}, 1, {d}, 1);", y.ptr));
                self.line(&format!("cblas_daxpy((int)({n}), {a}, {}, 1, {d}, 1);", x.ptr));
            }
            Func::Gemv(t) => {
                let a = self.scalar(&args[0], env)?;
                let m = self.view(&args[1], env)?;
                let x = self.view(&args[2], env)?;
                let b = self.scalar(&args[3], env)?;
                let c = self.view(&args[4], env)?;
                let (r, k) = (&m.dims[0], &m.dims[1]);
                self.line(&format!("cblas_dcopy((int)({}), {}, 1, {d}, 1);", dest.count(), c.ptr));
                self.line(&format!(
                    "cblas_dgemv(CblasRowMajor, {}, (int)({r}), (int)({k}), {a}, {}, (int)({k}), {}, 1, {b}, {d}, 1);",
                    trans(*t),
                    m.ptr,
                    x.ptr
                ));
            }
            Func::Gemm(ta, tb) => {
                let a = self.scalar(&args[0], env)?;
                let ma = self.view(&args[1], env)?;
                let mb = self.view(&args[2], env)?;
                let b = self.scalar(&args[3], env)?;
                let c = self.view(&args[4], env)?;
                let (m, n) = (&dest.dims[0], &dest.dims[1]);
                let k = &ma.dims[usize::from(!*ta)];
                self.line(&format!("cblas_dcopy((int)({}), {}, 1, {d}, 1);", dest.count(), c.ptr));
                self.line(&format!(
                    "cblas_dgemm(CblasRowMajor, {}, {}, (int)({m}), (int)({n}), (int)({k}), {a}, {}, (int)({}), {}, (int)({}), {b}, {d}, (int)({n}));",
                    trans(*ta),
                    trans(*tb),
                    ma.ptr,
                    ma.dims[1],
                    mb.ptr,
                    mb.dims[1]
                ));
            }
            Func::Transpose => {
                let m = self.view(&args[0], env)?;
                let (r, c) = (m.dims[0].clone(), m.dims[1].clone());
                let i = self.loop_over(&c);
                let j = self.loop_over(&r);
                self.line(&format!("{d}[{i} * ({r}) + {j}] = {}[{j} * ({c}) + {i}];", m.ptr));
                self.close();
                self.close();
            }
            Func::Memset if is_zero(&args[0]) => {
                self.line(&format!("memset({d}, 0, (size_t)({}) * sizeof(double));", dest.count()));
            }
            Func::Memset | Func::Full => {
                let c = self.scalar(&args[0], env)?;
                let i = self.loop_over(&dest.count());
                self.line(&format!("{d}[{i}] = {c};"));
                self.close();
            }
            Func::Mv => {
                let m = self.view(&args[0], env)?;
                let x = self.view(&args[1], env)?;
                let k = m.dims[1].clone();
                let i = self.loop_over(&m.dims[0]);
                let s = self.name('s');
                self.line(&format!("double {s} = 0.0;"));
                let p = self.loop_over(&k);
                self.line(&format!("{s} = {}[{i} * ({k}) + {p}] * {}[{p}] + {s};", m.ptr, x.ptr));
                self.close();
                self.line(&format!("{d}[{i}] = {s};"));
                self.close();
            }
            Func::Mm => {
                let a = self.view(&args[0], env)?;
                let b = self.view(&args[1], env)?;
                let (k, n) = (a.dims[1].clone(), b.dims[1].clone());
                let i = self.loop_over(&a.dims[0]);
                let j = self.loop_over(&n);
                let s = self.name('s');
                self.line(&format!("double {s} = 0.0;"));
                let p = self.loop_over(&k);
                self.line(&format!("{s} = {}[{i} * ({k}) + {p}] * {}[{p} * ({n}) + {j}] + {s};", a.ptr, b.ptr));
                self.close();
                self.line(&format!("{d}[{i} * ({n}) + {j}] = {s};"));
                self.close();
                self.close();
            }
            Func::TAdd | Func::TMul => {
                let op = if *f == Func::TAdd { "+" } else { "*" };
                let x = self.value(&args[0], env)?;
                let y = self.value(&args[1], env)?;
                let i = self.loop_over(&dest.count());
                let elem = |v: &CVal| match v {
                    CVal::Scalar(s) => Ok(s.clone()),
                    CVal::Array(w) if product(&w.dims) == dest.count() => Ok(format!("{}[{i}]", w.ptr)),
                    other => unsupported(format!("broadcast of {:?}", other.shape())),
                };
                let (ex, ey) = (elem(&x)?, elem(&y)?);
                self.line(&format!("{d}[{i}] = {ex} {op} {ey};"));
                self.close();
            }
            _ => unreachable!(),
        }
        Ok(())
    }
}

/// The harness's input generator: splitmix64 mapped to [-1, 1).
#[derive(Clone, Debug)]
pub struct HarnessRng(u64);

impl HarnessRng {
    pub fn new(seed: u64) -> Self {
        HarnessRng(seed)
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

const HARNESS_RNG_C: &str = r#"static unsigned long long h_state;

static double h_uniform(void) {
    unsigned long long z = (h_state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return (double)(z >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}
"#;

/// The inputs the emitted harness generates for `seed`, in parameter order.
pub fn harness_inputs(
    kernel: &KernelDef,
    sizes: &SizeEnv,
    seed: u64,
) -> Result<BTreeMap<Symbol, Value<f64>>, CodegenError> {
    fn fill(sort: &Sort, sizes: &SizeEnv, rng: &mut HarnessRng) -> Result<Value<f64>, CodegenError> {
        match sort {
            Sort::Float => Ok(Value::Scalar(rng.next_uniform())),
            Sort::Array(e, n) => {
                let n = n.eval(sizes).ok_or_else(|| CodegenError::Unsupported(format!("size {n}")))?;
                Ok(Value::Arr((0..n).map(|_| fill(e, sizes, rng)).collect::<Result<_, _>>()?))
            }
            other => unsupported(format!("input of sort {other}")),
        }
    }
    let mut rng = HarnessRng::new(seed);
    kernel.params.iter().map(|(n, s)| Ok((n.clone(), fill(s, sizes, &mut rng)?))).collect()
}

/// Sum of all scalars in row-major order, as the harness computes it.
pub fn checksum(v: &Value<f64>) -> f64 {
    v.flatten().into_iter().fold(0.0, |acc, x| acc + x)
}

/// A C translation unit for `solution` with a `main` that runs it on
/// seeded inputs at `sizes` and prints `CHECKSUM <hex bits>`.
pub fn emit_c(kernel: &KernelDef, solution: &Expr, sizes: &SizeEnv, seed: u64) -> Result<String, CodegenError> {
    let size_names: Vec<String> = kernel.sizes.iter().map(|s| s.name.to_string()).collect();
    let size_set: BTreeSet<String> = size_names.iter().cloned().collect();
    let mut inputs = BTreeMap::new();
    let mut params: Vec<String> = size_names.iter().map(|s| format!("long {s}")).collect();
    let mut fills = Vec::new();
    for (name, sort) in &kernel.params {
        let c = c_name(name, &size_set);
        match sort {
            Sort::Float => {
                params.push(format!("double {c}"));
                fills.push((c.clone(), None));
                inputs.insert(name.clone(), CVal::Scalar(c));
            }
            Sort::Array(..) => {
                let dims: Vec<String> = sort.dims().iter().map(size_c).collect();
                params.push(format!("const double *{c}"));
                fills.push((c.clone(), Some(product(&dims))));
                inputs.insert(name.clone(), CVal::Array(View { ptr: c, dims }));
            }
            other => return unsupported(format!("parameter {name} of sort {other}")),
        }
    }
    let mut g = Gen { body: String::new(), depth: 0, fresh: 0, scopes: Vec::new(), inputs };
    let mut env = Vec::new();
    let shape = g.shape(solution, &mut env)?;
    let outs: Vec<(String, Shape)> = match &shape {
        Shape::Tuple(a, b) => vec![("out0".into(), (**a).clone()), ("out1".into(), (**b).clone())],
        s => vec![("out".into(), s.clone())],
    };
    for (o, s) in &outs {
        if matches!(s, Shape::Tuple(..)) {
            return unsupported("nested tuple results");
        }
        params.push(format!("double *{o}"));
    }

    g.open(&format!("static void kernel({})", params.join(", ")));
    for s in &size_names {
        g.line(&format!("(void){s};"));
    }
    for (c, _) in &fills {
        g.line(&format!("(void){c};"));
    }
    let parts: Vec<Expr> = match (&shape, solution) {
        (Shape::Tuple(..), Expr::Tuple(a, b)) => vec![(**a).clone(), (**b).clone()],
        (Shape::Tuple(..), _) => vec![Expr::fst(solution.clone()), Expr::snd(solution.clone())],
        _ => vec![solution.clone()],
    };
    for ((o, s), part) in outs.iter().zip(&parts) {
        match s {
            Shape::Scalar => {
                let x = g.scalar(part, &mut env)?;
                g.line(&format!("{o}[0] = {x};"));
            }
            Shape::Array(dims) => g.write_into(part, &View { ptr: o.clone(), dims: dims.clone() }, &mut env)?,
            Shape::Tuple(..) => unreachable!(),
        }
    }
    g.close();

    let mut src = String::new();
    src.push_str("#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n");
    src.push_str("#ifdef USE_CBLAS\n#include <cblas.h>\n#else\n#include \"fallback_blas.h\"\n#endif\n\n");
    writeln!(src, "/* {} */", kernel.name).unwrap();
    src.push_str(&g.body);
    src.push('\n');
    src.push_str(HARNESS_RNG_C);
    src.push_str("\nint main(void) {\n");
    writeln!(src, "    h_state = {seed}ULL;").unwrap();
    src.push_str("    (void)h_uniform;\n");
    for s in &size_names {
        let v = sizes.get(s.as_str()).ok_or_else(|| CodegenError::Unsupported(format!("no value for size {s}")))?;
        writeln!(src, "    const long {s} = {v};").unwrap();
    }
    for (c, count) in &fills {
        match count {
            None => writeln!(src, "    double {c} = h_uniform();").unwrap(),
            Some(n) => {
                writeln!(src, "    double *{c} = malloc((size_t)({n}) * sizeof(double));").unwrap();
                writeln!(src, "    for (long h_k = 0; h_k < {n}; h_k++) {c}[h_k] = h_uniform();").unwrap();
            }
        }
    }
    let counts: Vec<String> = outs
        .iter()
        .map(|(_, s)| match s {
            Shape::Array(d) => product(d),
            _ => "1".into(),
        })
        .collect();
    for ((o, _), n) in outs.iter().zip(&counts) {
        writeln!(src, "    double *{o} = calloc((size_t)({n}), sizeof(double));").unwrap();
    }
    let mut args: Vec<String> = size_names.clone();
    args.extend(fills.iter().map(|(c, _)| c.clone()));
    args.extend(outs.iter().map(|(o, _)| o.clone()));
    writeln!(src, "    kernel({});", args.join(", ")).unwrap();
    src.push_str("    double h_sum = 0.0;\n");
    for ((o, _), n) in outs.iter().zip(&counts) {
        writeln!(src, "    for (long h_k = 0; h_k < {n}; h_k++) h_sum += {o}[h_k];").unwrap();
    }
    src.push_str("    unsigned long long h_bits;\n    memcpy(&h_bits, &h_sum, sizeof h_bits);\n");
    src.push_str("    printf(\"CHECKSUM %016llx\\n\", h_bits);\n");
    for (c, count) in &fills {
        if count.is_some() {
            writeln!(src, "    free({c});").unwrap();
        }
    }
    for (o, _) in &outs {
        writeln!(src, "    free({o});").unwrap();
    }
    src.push_str("    return 0;\n}\n");
    Ok(src)
}

/// Writes `<root>/<kernel>/<target>/step<k>.c` and the fallback header next to it.
pub fn write_program(
    root: &Path,
    kernel: &str,
    target: &str,
    step: usize,
    source: &str,
) -> Result<PathBuf, CodegenError> {
    let dir = root.join(kernel).join(target);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("fallback_blas.h"), FALLBACK_BLAS_H)?;
    let path = dir.join(format!("step{step}.c"));
    std::fs::write(&path, source)?;
    Ok(path)
}

/// Compiles `c_file` warning-clean with `cc`, runs it and returns the checksum.
pub fn compile_and_run(c_file: &Path, cc: &str) -> Result<f64, CodegenError> {
    let exe = c_file.with_extension("bin");
    let out = Command::new(cc)
        .args(["-std=c11", "-O1", "-Wall", "-Wextra", "-Werror", "-o"])
        .arg(&exe)
        .arg(c_file)
        .output()?;
    if !out.status.success() {
        return Err(CodegenError::Compile(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    let run = Command::new(&exe).output()?;
    if !run.status.success() {
        return Err(CodegenError::Run(format!("exit status {}", run.status)));
    }
    parse_checksum(&String::from_utf8_lossy(&run.stdout))
}

pub fn parse_checksum(stdout: &str) -> Result<f64, CodegenError> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("CHECKSUM "))
        .and_then(|h| u64::from_str_radix(h.trim(), 16).ok())
        .map(f64::from_bits)
        .ok_or_else(|| CodegenError::Run(format!("no checksum in output: {stdout:?}")))
}
