//! Randomised soundness checking for rewrite rules.
//!
//! A rule is exercised by instantiating its left-hand side with random
//! well-sorted terms, placing the result in a small program, and letting the
//! engine propose rewrites on an e-graph of that program. Each proposal is
//! spliced back into the program, and both programs are run on random inputs.

use std::collections::BTreeMap;

use idiomsat::egraph::{EGraph, ENode, SizeExtractor};
use idiomsat::interp::{eval, random_inputs, Tolerance, Value};
use idiomsat::ir::{free_indices, parse_kernel, Expr, KernelDef, SizeEnv, SizeExpr, Sort, Symbol};
use idiomsat::pattern::{pattern_sort, Pattern};
use idiomsat::rewrite::{proposals, Guard, RewriteRule, StepPolicy};
use num_rational::Rational64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KERNEL: &str = "(kernel sound
  (params (a f64) (b f64) (X (arr f64 N)) (Y (arr f64 N)) (U (arr f64 M))
          (A (arr (arr f64 M) N)) (B (arr (arr f64 N) M)) (S (arr (arr f64 N) N)))
  (sizes (N 4 4) (M 3 3))
  0)";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dim {
    N,
    M,
}

impl Dim {
    fn size(self) -> SizeExpr {
        SizeExpr::param(idiomsat::ir::sym(self.name()))
    }

    fn name(self) -> &'static str {
        match self {
            Dim::N => "N",
            Dim::M => "M",
        }
    }
}

/// Generator-level types.
#[derive(Clone, Debug, PartialEq)]
enum Ty {
    F,
    Sz(Dim),
    Idx,
    V(Dim),
    Mat(Dim, Dim),
    Fun(Box<Ty>),
    Fold,
}

impl Ty {
    fn sort(&self) -> (Sort, Option<SizeExpr>) {
        match self {
            Ty::F => (Sort::Float, None),
            Ty::Sz(d) => (Sort::Size, Some(d.size())),
            Ty::Idx => (Sort::Size, None),
            Ty::V(d) => (Sort::vector(d.size()), None),
            Ty::Mat(r, c) => (Sort::matrix(r.size(), c.size()), None),
            Ty::Fun(t) => (Sort::Fn(Box::new(Sort::Size), Box::new(t.sort().0)), None),
            Ty::Fold => {
                let step = Sort::Fn(Box::new(Sort::Float), Box::new(Sort::Float));
                (Sort::Fn(Box::new(Sort::Size), Box::new(step)), None)
            }
        }
    }
}

fn arrays() -> Vec<Ty> {
    use Dim::*;
    vec![Ty::V(N), Ty::V(M), Ty::Mat(N, M), Ty::Mat(M, N), Ty::Mat(N, N)]
}

/// Candidate types for a pattern variable, keyed on the naming conventions
/// of the rule catalog. Anything else the sort check throws out.
fn menu(name: &str) -> Vec<Ty> {
    use Dim::*;
    let funs = vec![Ty::Fun(Box::new(Ty::F)), Ty::Fun(Box::new(Ty::V(N))), Ty::Fun(Box::new(Ty::V(M)))];
    match name {
        "N" | "M" => vec![Ty::Sz(N), Ty::Sz(M)],
        "i" => vec![Ty::Idx],
        "f" => funs,
        "e" => {
            let mut all = vec![Ty::F, Ty::Sz(N), Ty::Idx, Ty::Fold];
            all.extend(arrays());
            all.extend(funs);
            all
        }
        n if n.starts_with(|c: char| c.is_ascii_uppercase()) => arrays(),
        _ => vec![Ty::F, Ty::Idx, Ty::V(N), Ty::V(M), Ty::Mat(N, M)],
    }
}

/// Every assignment of menu types to the rule's variables under which the
/// left-hand side is well-sorted and the sort guards hold.
fn assignments(rule: &RewriteRule) -> Vec<BTreeMap<Symbol, Ty>> {
    let vars: Vec<Symbol> = {
        let mut v: Vec<Symbol> = rule.lhs.vars().into_iter().map(|(n, _)| n).collect();
        v.dedup();
        v
    };
    let mut out = Vec::new();
    let mut cur = BTreeMap::new();
    fn go(rule: &RewriteRule, vars: &[Symbol], cur: &mut BTreeMap<Symbol, Ty>, out: &mut Vec<BTreeMap<Symbol, Ty>>) {
        let Some((v, rest)) = vars.split_first() else {
            let ok = pattern_sort(&rule.lhs, &|n: &str| cur.get(n).map(Ty::sort)).is_ok();
            let guards = rule.guards.iter().all(|g| match g {
                Guard::Sort(v, f) => cur.get(v).is_some_and(|t| f.accepts(&t.sort().0)),
                _ => true,
            });
            if ok && guards {
                out.push(cur.clone());
            }
            return;
        };
        for t in menu(v) {
            cur.insert(v.clone(), t);
            go(rule, rest, cur, out);
        }
        cur.remove(v);
    }
    go(rule, &vars, &mut cur, &mut out);
    out
}

/// Binder types in scope, outermost first. `None` marks a binder whose type
/// the generator does not track; such indices are never referenced.
type Ctx = Vec<Option<Ty>>;

/// The context each variable's term is generated in: the binders around its
/// first occurrence, less the ones its shift skips.
fn var_contexts(p: &Pattern, tys: &BTreeMap<Symbol, Ty>, ctx: &mut Ctx, out: &mut BTreeMap<Symbol, Ctx>) {
    use idiomsat::egraph::Op;
    match p {
        Pattern::Var { name, shift } => {
            let keep = ctx.len().saturating_sub(*shift as usize);
            out.entry(name.clone()).or_insert_with(|| ctx[..keep].to_vec());
        }
        Pattern::Node(op, kids) => {
            let lam_body = |k: &Pattern| match k {
                Pattern::Node(Op::Lambda, b) => Some(b[0].clone()),
                _ => None,
            };
            match (op, kids.as_slice()) {
                (Op::Build, [n, f]) if lam_body(f).is_some() => {
                    var_contexts(n, tys, ctx, out);
                    ctx.push(Some(Ty::Idx));
                    var_contexts(&lam_body(f).unwrap(), tys, ctx, out);
                    ctx.pop();
                }
                (Op::IFold, [n, init, f]) if lam_body(f).as_ref().and_then(lam_body).is_some() => {
                    var_contexts(n, tys, ctx, out);
                    var_contexts(init, tys, ctx, out);
                    ctx.push(Some(Ty::Idx));
                    ctx.push(Some(Ty::F));
                    var_contexts(&lam_body(&lam_body(f).unwrap()).unwrap(), tys, ctx, out);
                    ctx.truncate(ctx.len() - 2);
                }
                (Op::App, [f, y]) if lam_body(f).is_some() => {
                    var_contexts(y, tys, ctx, out);
                    let yt = match y {
                        Pattern::Var { name, .. } => tys.get(name).cloned(),
                        _ => None,
                    };
                    ctx.push(yt);
                    var_contexts(&lam_body(f).unwrap(), tys, ctx, out);
                    ctx.pop();
                }
                (Op::Lambda, [b]) => {
                    ctx.push(None);
                    var_contexts(b, tys, ctx, out);
                    ctx.pop();
                }
                _ => kids.iter().for_each(|k| var_contexts(k, tys, ctx, out)),
            }
        }
    }
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Gen<'_> {
    fn vars_of(&self, ctx: &Ctx, want: &Ty) -> Vec<Expr> {
        let n = ctx.len();
        (0..n).filter(|&j| ctx[j].as_ref() == Some(want)).map(|j| Expr::Var((n - 1 - j) as u32)).collect()
    }

    fn pick(&mut self, xs: Vec<Expr>) -> Expr {
        xs.choose(self.rng).cloned().unwrap()
    }

    fn index(&mut self, ctx: &Ctx) -> Expr {
        let mut xs = self.vars_of(ctx, &Ty::Idx);
        xs.extend(xs.clone());
        xs.push(Expr::SizeLit(self.rng.gen_range(0..3)));
        self.pick(xs)
    }

    fn float(&mut self, ctx: &Ctx, depth: u32) -> Expr {
        let lits = [0, 1, 2, -1];
        let mut leaves = vec![
            Expr::num(*lits.choose(self.rng).unwrap()),
            Expr::NumLit(Rational64::new(1, 2)),
            Expr::input("a"),
            Expr::input("b"),
        ];
        leaves.extend(self.vars_of(ctx, &Ty::F));
        if depth == 0 || self.rng.gen_bool(0.4) {
            return self.pick(leaves);
        }
        match self.rng.gen_range(0..4) {
            0 => Expr::add(self.float(ctx, depth - 1), self.float(ctx, depth - 1)),
            1 => Expr::mul(self.float(ctx, depth - 1), self.float(ctx, depth - 1)),
            2 => {
                let d = if self.rng.gen_bool(0.5) { Dim::N } else { Dim::M };
                Expr::index(self.term(&Ty::V(d), ctx, depth - 1), self.index(ctx))
            }
            _ => self.pick(leaves),
        }
    }

    /// A term of type `ty` in context `ctx`.
    fn term(&mut self, ty: &Ty, ctx: &Ctx, depth: u32) -> Expr {
        let under = |ctx: &Ctx, t: Ty| {
            let mut c = ctx.clone();
            c.push(Some(t));
            c
        };
        match ty {
            Ty::F => self.float(ctx, depth),
            Ty::Sz(d) => Expr::size(d.name()),
            Ty::Idx => self.index(ctx),
            Ty::V(d) => {
                let input = match d {
                    Dim::N => self.pick(vec![Expr::input("X"), Expr::input("Y")]),
                    Dim::M => Expr::input("U"),
                };
                if depth == 0 || self.rng.gen_bool(0.4) {
                    return input;
                }
                match self.rng.gen_range(0..3) {
                    0 => Expr::build(Expr::size(d.name()), Expr::lam(self.float(&under(ctx, Ty::Idx), depth - 1))),
                    1 => {
                        let rows = if self.rng.gen_bool(0.5) { Dim::N } else { Dim::M };
                        Expr::index(self.term(&Ty::Mat(rows, *d), ctx, depth - 1), self.index(ctx))
                    }
                    _ => input,
                }
            }
            Ty::Mat(r, c) => {
                let input = match (r, c) {
                    (Dim::N, Dim::M) => Some(Expr::input("A")),
                    (Dim::M, Dim::N) => Some(Expr::input("B")),
                    (Dim::N, Dim::N) => Some(Expr::input("S")),
                    _ => None,
                };
                match input {
                    Some(i) if depth == 0 || self.rng.gen_bool(0.5) => i,
                    _ => {
                        let row = self.term(&Ty::V(*c), &under(ctx, Ty::Idx), depth.saturating_sub(1));
                        Expr::build(Expr::size(r.name()), Expr::lam(row))
                    }
                }
            }
            Ty::Fun(t) => Expr::lam(self.term(t, &under(ctx, Ty::Idx), depth)),
            Ty::Fold => {
                let inner = under(&under(ctx, Ty::Idx), Ty::F);
                Expr::lam(Expr::lam(self.float(&inner, depth)))
            }
        }
    }
}

/// Replaces the occurrences of `from` under at least `reach` binders, which
/// are the places `to` is well-scoped. Counts the replacements.
fn replace(e: &Expr, from: &Expr, to: &Expr, reach: u32, depth: u32, count: &mut usize) -> Expr {
    if e == from && reach <= depth {
        *count += 1;
        return to.clone();
    }
    let (op, kids) = ENode::split(e);
    let inner = if matches!(e, Expr::Lambda(_)) { depth + 1 } else { depth };
    ENode::join(&op, kids.into_iter().map(|k| replace(k, from, to, reach, inner, count)).collect())
}

#[derive(Debug)]
pub struct RuleReport {
    pub name: String,
    pub instances: usize,
    pub inputs: usize,
    pub failures: Vec<String>,
}

impl RuleReport {
    pub fn passed(&self, min_instances: usize) -> bool {
        self.failures.is_empty() && self.instances >= min_instances
    }
}

pub fn kernel() -> KernelDef {
    parse_kernel(KERNEL).expect("soundness kernel parses")
}

type Inputs = BTreeMap<Symbol, Value<f64>>;

fn has_closure(v: &Value<f64>) -> bool {
    match v {
        Value::Closure(..) => true,
        Value::Arr(xs) => xs.iter().any(has_closure),
        Value::Tup(a, b) => has_closure(a) || has_closure(b),
        _ => false,
    }
}

fn run_all(e: &Expr, inputs: &[Inputs], sizes: &SizeEnv) -> Option<Vec<Value<f64>>> {
    inputs.iter().map(|i| eval(e, i, sizes).ok()).collect()
}

/// Checks `rule` on `want` random instances, each run on `inputs` random
/// input sets. Gives up after a bounded number of attempts.
pub fn check_rule(rule: &RewriteRule, want: usize, inputs: usize, seed: u64) -> RuleReport {
    let kernel = kernel();
    let sizes = kernel.test_sizes();
    let policy = StepPolicy::default();
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RuleReport { name: rule.name.clone(), instances: 0, inputs, failures: Vec::new() };
    let assigns = assignments(rule);
    if assigns.is_empty() {
        report.failures.push("no well-sorted instantiation".into());
        return report;
    }
    for _ in 0..want * 200 {
        if report.instances >= want || report.failures.len() >= 5 {
            break;
        }
        let tys = assigns.choose(&mut rng).unwrap().clone();
        let wrapped = rng.gen_bool(0.5);
        let mut base: Ctx = if wrapped { vec![Some(Ty::Idx)] } else { vec![] };
        let mut ctxs = BTreeMap::new();
        var_contexts(&rule.lhs, &tys, &mut base, &mut ctxs);
        let mut gen = Gen { rng: &mut rng };
        let terms: BTreeMap<Symbol, Expr> = tys.iter().map(|(v, t)| (v.clone(), gen.term(t, &ctxs[v], 2))).collect();
        let lhs = rule.lhs.instantiate(&|n: &str| terms[n].clone());
        let program = if wrapped {
            Expr::build(Expr::size("N"), Expr::lam(Expr::tuple(lhs.clone(), Expr::Var(0))))
        } else {
            lhs.clone()
        };
        let ins: Vec<Inputs> = (0..inputs).map(|_| random_inputs(&kernel, &sizes, &mut rng).unwrap()).collect();
        let Some(expected) = run_all(&program, &ins, &sizes) else { continue };
        // Functions cannot be compared by value.
        if expected.iter().any(has_closure) {
            continue;
        }

        let mut g = EGraph::with_inputs(kernel.input_sorts());
        g.add_expr(&program);
        g.rebuild().unwrap();
        let Some(lhs_class) = g.lookup_expr(&lhs) else { continue };
        let props = proposals(&g, rule, &policy);
        let ex = SizeExtractor::new(&g);
        let mut hit = false;
        for (root, rhs) in props.iter().take(8) {
            let from = ex.extract(*root).unwrap();
            let reach = free_indices(rhs).into_iter().max().map_or(0, |i| i + 1);
            let mut count = 0;
            let rewritten = replace(&program, &from, rhs, reach, 0, &mut count);
            if count == 0 {
                continue;
            }
            for (i, want) in ins.iter().zip(&expected) {
                let got = eval(&rewritten, i, &sizes);
                let bad = match &got {
                    Ok(v) => tol.compare(want, v),
                    Err(e) => Some(format!("rewritten program fails: {e}")),
                };
                if let Some(why) = bad {
                    report.failures.push(format!(
                        "{} on {}\n  rewrote {} to {}\n  {why}",
                        rule.name,
                        idiomsat::ir::print_expr(&program),
                        idiomsat::ir::print_expr(&from),
                        idiomsat::ir::print_expr(rhs)
                    ));
                    break;
                }
            }
            hit |= g.find(*root) == g.find(lhs_class);
        }
        if hit {
            report.instances += 1;
        }
    }
    report
}
