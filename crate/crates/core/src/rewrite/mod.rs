//! Rewrite rules, e-matching with shift-annotated variables, and the
//! saturation scheduler.

mod run;
mod scope;
mod step;

use std::fmt;

use crate::egraph::{EGraph, Op};
use crate::ir::{Func, Sort, Symbol};
use crate::pattern::Pattern;

pub use run::{run, BestSolution, RunLimits, SaturationTrace, StepRecord, StopReason};
pub use scope::{Binder, Scope, Scopes};
pub use step::{
    apply_match, ematch, enumerate_unbound, proposals, saturation_step, Binding, Match, Pending, Rhs, StepReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Core,
    Scalar,
    Blas,
    Pytorch,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Core => "core",
            Family::Scalar => "scalar",
            Family::Blas => "blas",
            Family::Pytorch => "pytorch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplierKind {
    Plain,
    /// `(app (lam ?body) ?arg)`: substitute an extracted argument into an
    /// extracted body.
    BetaSubst {
        body: &'static str,
        arg: &'static str,
    },
    IntroLambda,
}

/// Class-level sort predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SortFilter {
    Any,
    Float,
    Size,
    /// Float or array.
    Value,
    Vector,
    Matrix,
}

impl SortFilter {
    pub fn accepts(self, s: &Sort) -> bool {
        match self {
            SortFilter::Any => true,
            SortFilter::Float => *s == Sort::Float,
            SortFilter::Size => *s == Sort::Size,
            SortFilter::Value => matches!(s, Sort::Float | Sort::Array(..)),
            SortFilter::Vector => matches!(s, Sort::Array(e, _) if **e == Sort::Float),
            SortFilter::Matrix => {
                matches!(s, Sort::Array(r, _) if matches!(&**r, Sort::Array(e, _) if **e == Sort::Float))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SortFilter::Any => "any",
            SortFilter::Float => "f64",
            SortFilter::Size => "size",
            SortFilter::Value => "value",
            SortFilter::Vector => "vector",
            SortFilter::Matrix => "matrix",
        }
    }
}

/// Side condition checked on a match before it is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Guard {
    Sort(Symbol, SortFilter),
    /// The class has no free indices.
    Closed(Symbol),
    /// The class holds no `transpose` call.
    NoTranspose(Symbol),
    /// The outer dimension of the first variable's array sort is the size
    /// held by the second.
    OuterDim(Symbol, Symbol),
}

/// Where candidates for an unbound right-hand-side variable come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// Any class passing the filter, smallest first.
    Classes(SortFilter),
    /// Classes holding a bare index, lowest index first.
    IndexVars,
    /// Size-valued classes, bare parameters first.
    SizeClasses,
    /// The outer dimension of the named variable's array sort.
    OuterDimOf(Symbol),
    /// The extent of the `build` or `ifold` whose index the named variable
    /// is.
    ExtentOf(Symbol),
}

#[derive(Clone, Debug)]
pub struct RewriteRule {
    pub name: String,
    pub family: Family,
    pub lhs: Pattern,
    pub rhs: Pattern,
    pub applier: ApplierKind,
    pub guards: Vec<Guard>,
    pub unbound: Vec<(Symbol, Source)>,
    /// Expanding rules; limited by the introduction-depth policy.
    pub intro: bool,
}

impl RewriteRule {
    pub fn new(name: &str, family: Family, lhs: &str, rhs: &str) -> RewriteRule {
        let lhs = Pattern::parse(lhs).unwrap_or_else(|e| panic!("rule {name}: bad lhs: {e}"));
        let rhs = Pattern::parse(rhs).unwrap_or_else(|e| panic!("rule {name}: bad rhs: {e}"));
        RewriteRule {
            name: name.to_string(),
            family,
            lhs,
            rhs,
            applier: ApplierKind::Plain,
            guards: Vec::new(),
            unbound: Vec::new(),
            intro: false,
        }
    }

    pub fn guard(mut self, g: Guard) -> Self {
        self.guards.push(g);
        self
    }

    pub fn sort_of(self, var: &str, f: SortFilter) -> Self {
        self.guard(Guard::Sort(crate::ir::sym(var), f))
    }

    pub fn closed(self, var: &str) -> Self {
        self.guard(Guard::Closed(crate::ir::sym(var)))
    }

    pub fn no_transpose(self, var: &str) -> Self {
        self.guard(Guard::NoTranspose(crate::ir::sym(var)))
    }

    pub fn outer_dim(self, array: &str, size: &str) -> Self {
        self.guard(Guard::OuterDim(crate::ir::sym(array), crate::ir::sym(size)))
    }

    pub fn unbound(mut self, var: &str, src: Source) -> Self {
        self.unbound.push((crate::ir::sym(var), src));
        self
    }

    pub fn applier(mut self, a: ApplierKind) -> Self {
        self.applier = a;
        self
    }

    pub fn intro(mut self) -> Self {
        self.intro = true;
        self
    }

    /// Right-hand-side variables not bound by the left-hand side.
    pub fn free_rhs_vars(&self) -> Vec<Symbol> {
        let bound = self.lhs.vars();
        self.rhs.vars().into_iter().filter(|(n, _)| !bound.iter().any(|(b, _)| b == n)).map(|(n, _)| n).collect()
    }

    pub(crate) fn guard_holds(&self, g: &EGraph, m: &Match) -> bool {
        self.guards.iter().all(|guard| match guard {
            Guard::Sort(v, f) => m.subst.get(v).is_some_and(|(id, _)| f.accepts(&g.data(id).sort)),
            Guard::Closed(v) => m.subst.get(v).is_some_and(|(id, _)| g.data(id).free.is_empty()),
            Guard::NoTranspose(v) => m
                .subst
                .get(v)
                .is_some_and(|(id, _)| !g.class(id).nodes.iter().any(|n| n.op == Op::Call(Func::Transpose))),
            Guard::OuterDim(a, n) => match (m.subst.get(a), m.subst.get(n)) {
                (Some((a, _)), Some((n, _))) => {
                    let dim = g.data(a).sort.dims().into_iter().next();
                    dim.is_some() && dim == g.data(n).size
                }
                _ => false,
            },
        })
    }
}

impl fmt::Display for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.applier {
            ApplierKind::BetaSubst { body, arg } => {
                write!(f, "{} [{}] {} => subst(?{body}, ?{arg})", self.name, self.family.name(), self.lhs)?
            }
            _ => write!(f, "{} [{}] {} => {}", self.name, self.family.name(), self.lhs, self.rhs)?,
        }
        for g in &self.guards {
            match g {
                Guard::Sort(v, s) => write!(f, " if ?{v}: {}", s.name())?,
                Guard::Closed(v) => write!(f, " if closed ?{v}")?,
                Guard::NoTranspose(v) => write!(f, " if no-transpose ?{v}")?,
                Guard::OuterDim(a, n) => write!(f, " if len ?{a} = ?{n}")?,
            }
        }
        Ok(())
    }
}

/// Knobs for one saturation step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPolicy {
    /// Candidates tried per unbound right-hand-side variable.
    pub unbound_cap: usize,
    /// Expanding rules only fire on classes fewer than this many expansions
    /// away from the input.
    pub intro_depth_limit: u32,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { unbound_cap: 8, intro_depth_limit: 4 }
    }
}
