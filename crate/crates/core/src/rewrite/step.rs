use std::collections::HashMap;

use crate::egraph::{ConstConflict, EGraph, ENode, Id, Op, Reach, SizeExtractor};
use crate::ir::{shift, substitute, Expr, SizeExpr, Sort, Symbol};
use crate::pattern::{match_class, node_size, node_sort, Pattern, Subst};

use super::scope::{Binder, Scopes};
use super::{ApplierKind, RewriteRule, SortFilter, Source, StepPolicy};

/// Right-hand side ready to be added: class references where a variable is
/// used at its matched shift, concrete terms elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub enum Rhs {
    Class(Id),
    Term { expr: Expr, sort: Sort, size: Option<SizeExpr> },
    Node(Op, Vec<Rhs>),
}

impl Rhs {
    fn sort(&self, g: &EGraph) -> Option<(Sort, Option<SizeExpr>)> {
        match self {
            Rhs::Class(id) => Some((g.data(*id).sort.clone(), g.data(*id).size.clone())),
            Rhs::Term { sort, size, .. } => Some((sort.clone(), size.clone())),
            Rhs::Node(op, kids) => {
                let ks = kids.iter().map(|k| k.sort(g)).collect::<Option<Vec<_>>>()?;
                let sorts: Vec<Sort> = ks.iter().map(|(s, _)| s.clone()).collect();
                let sizes: Vec<Option<SizeExpr>> = ks.into_iter().map(|(_, z)| z).collect();
                let sort = node_sort(op, &sorts, &sizes).ok()?;
                Some((sort, node_size(op, &sizes)))
            }
        }
    }

    /// The term this right-hand side denotes, reading classes through `ex`.
    pub fn to_expr(&self, ex: &SizeExtractor) -> Option<Expr> {
        match self {
            Rhs::Class(id) => ex.extract(*id).ok(),
            Rhs::Term { expr, .. } => Some(expr.clone()),
            Rhs::Node(op, kids) => {
                let kids = kids.iter().map(|k| k.to_expr(ex)).collect::<Option<Vec<_>>>()?;
                Some(ENode::join(op, kids))
            }
        }
    }

    fn add(&self, g: &mut EGraph) -> Id {
        match self {
            Rhs::Class(id) => g.find(*id),
            Rhs::Term { expr, .. } => g.add_expr(expr),
            Rhs::Node(op, kids) => {
                let children = kids.iter().map(|k| k.add(g)).collect();
                g.add(ENode::new(op.clone(), children))
            }
        }
    }
}

/// One left-hand-side match. `witnesses` holds, for each shift-annotated
/// variable, a member of its class with the shift undone.
#[derive(Clone, Debug)]
pub struct Match {
    pub rule: String,
    pub root: Id,
    pub subst: Subst,
    pub witnesses: Vec<(Symbol, Expr)>,
}

impl Match {
    fn witness(&self, name: &str) -> Option<&Expr> {
        self.witnesses.iter().find(|(n, _)| &**n == name).map(|(_, e)| e)
    }
}

/// A binding for a variable only the right-hand side mentions.
#[derive(Clone, Debug, PartialEq)]
pub enum Binding {
    Class(Id),
    Term(Expr, Sort, Option<SizeExpr>),
}

/// Classes grouped by root operator, rebuilt once per step.
pub(crate) struct OpIndex {
    by_op: HashMap<Op, Vec<Id>>,
    all: Vec<Id>,
}

impl OpIndex {
    pub(crate) fn new(g: &EGraph) -> OpIndex {
        let mut by_op: HashMap<Op, Vec<Id>> = HashMap::new();
        let mut all = Vec::new();
        for c in g.classes() {
            all.push(c.id);
            for n in &c.nodes {
                let v = by_op.entry(n.op.clone()).or_default();
                if v.last() != Some(&c.id) {
                    v.push(c.id);
                }
            }
        }
        OpIndex { by_op, all }
    }

    fn roots(&self, p: &Pattern) -> &[Id] {
        match p {
            Pattern::Var { .. } => &self.all,
            Pattern::Node(op, _) => self.by_op.get(op).map_or(&[], |v| v.as_slice()),
        }
    }
}

/// All matches of `rule`'s left-hand side that pass its guards.
pub fn ematch(rule: &RewriteRule, g: &EGraph, ex: &SizeExtractor, policy: &StepPolicy) -> Vec<Match> {
    ematch_indexed(rule, g, ex, policy, &OpIndex::new(g))
}

pub(crate) fn ematch_indexed(
    rule: &RewriteRule,
    g: &EGraph,
    ex: &SizeExtractor,
    policy: &StepPolicy,
    index: &OpIndex,
) -> Vec<Match> {
    let mut out = Vec::new();
    for &root in index.roots(&rule.lhs) {
        if rule.intro && g.data(root).intro_depth >= policy.intro_depth_limit {
            continue;
        }
        for subst in match_class(&rule.lhs, g, ex, root) {
            let mut witnesses = Vec::new();
            let mut ok = true;
            for (name, id, k) in subst.iter() {
                if *k == 0 {
                    continue;
                }
                match ex.witness(*id, *k).and_then(|w| shift(&w, -(*k as i64), 0).ok()) {
                    Some(w) => witnesses.push((name.clone(), w)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            let m = Match { rule: rule.name.clone(), root, subst, witnesses };
            if ok && rule.guard_holds(g, &m) {
                out.push(m);
            }
        }
    }
    out
}

/// Candidate orderings for unbound variables, computed lazily per step.
pub(crate) struct Candidates<'a, 'g> {
    g: &'g EGraph,
    ex: &'a SizeExtractor<'g>,
    cache: HashMap<CandKey, Vec<Id>>,
    reach: &'a Reach,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum CandKey {
    Filter(SortFilter),
    IndexVars,
    Sizes,
}

impl<'a, 'g> Candidates<'a, 'g> {
    pub(crate) fn new(g: &'g EGraph, ex: &'a SizeExtractor<'g>, reach: &'a Reach) -> Self {
        Candidates { g, ex, cache: HashMap::new(), reach }
    }

    /// The first `cap` candidates under `key` that only mention indices
    /// bound `depth` binders deep.
    fn within(&mut self, key: CandKey, depth: usize, cap: usize) -> Vec<Binding> {
        let (g, reach) = (self.g, self.reach);
        let list = self.list(key);
        list.iter().filter(|c| reach.of(g, **c) as usize <= depth).take(cap).map(|c| Binding::Class(*c)).collect()
    }

    fn list(&mut self, key: CandKey) -> &[Id] {
        let (g, ex) = (self.g, self.ex);
        self.cache.entry(key).or_insert_with(|| {
            let size = |id: Id| ex.size(id).unwrap_or(u64::MAX);
            match key {
                CandKey::Filter(f) => {
                    let mut v: Vec<(u64, Id)> = g
                        .classes()
                        .filter(|c| f.accepts(&c.data.sort) && ex.size(c.id).is_some())
                        .map(|c| (size(c.id), c.id))
                        .collect();
                    v.sort();
                    v.into_iter().map(|(_, id)| id).collect()
                }
                CandKey::IndexVars => {
                    let mut v: Vec<(u32, Id)> = g
                        .classes()
                        .filter_map(|c| {
                            c.nodes
                                .iter()
                                .filter_map(|n| if let Op::Var(i) = n.op { Some(i) } else { None })
                                .min()
                                .map(|i| (i, c.id))
                        })
                        .collect();
                    v.sort();
                    v.into_iter().map(|(_, id)| id).collect()
                }
                CandKey::Sizes => {
                    let mut v: Vec<(bool, u64, Id)> = g
                        .classes()
                        .filter(|c| c.data.sort == Sort::Size && c.data.size.is_some())
                        .map(|c| {
                            let bare = c.nodes.iter().any(|n| matches!(n.op, Op::SizeParam(_)));
                            (!bare, size(c.id), c.id)
                        })
                        .collect();
                    v.sort();
                    v.into_iter().map(|(_, _, id)| id).collect()
                }
            }
        })
    }
}

/// Completes `m` with up to `cap` candidates for each unbound variable.
/// Candidates never refer to a binder absent at the match root.
pub fn enumerate_unbound(
    rule: &RewriteRule,
    m: &Match,
    g: &EGraph,
    ex: &SizeExtractor,
    cap: usize,
) -> Vec<Vec<(Symbol, Binding)>> {
    let reach = Reach::new(g);
    enumerate_with(rule, m, g, &mut Candidates::new(g, ex, &reach), &Scopes::new(g, &reach), cap)
}

pub(crate) fn enumerate_with(
    rule: &RewriteRule,
    m: &Match,
    g: &EGraph,
    cands: &mut Candidates,
    scopes: &Scopes,
    cap: usize,
) -> Vec<Vec<(Symbol, Binding)>> {
    let depth = scopes.depth(g, m.root);
    let mut out: Vec<Vec<(Symbol, Binding)>> = vec![Vec::new()];
    for (name, src) in &rule.unbound {
        let options: Vec<Binding> = match src {
            Source::Classes(f) => cands.within(CandKey::Filter(*f), depth, cap),
            Source::IndexVars => cands.within(CandKey::IndexVars, depth, cap),
            Source::SizeClasses => {
                // Every bare size parameter is offered; the cap only limits
                // compound sizes.
                let bare = cands
                    .list(CandKey::Sizes)
                    .iter()
                    .take_while(|c| g.class(**c).nodes.iter().any(|n| matches!(n.op, Op::SizeParam(_))))
                    .count();
                let n = if cap == 0 { 0 } else { bare.max(cap) };
                cands.within(CandKey::Sizes, depth, n)
            }
            Source::OuterDimOf(v) => {
                let dim = m.subst.get(v).and_then(|(id, _)| g.data(id).sort.dims().into_iter().next());
                match dim {
                    Some(d) if cap > 0 => {
                        let e = d.to_expr();
                        vec![match g.lookup_expr(&e) {
                            Some(id) => Binding::Class(id),
                            None => Binding::Term(e, Sort::Size, Some(d)),
                        }]
                    }
                    _ => Vec::new(),
                }
            }
            Source::ExtentOf(v) => {
                let index = m.subst.get(v).map(|(id, _)| g.find(id));
                let vars: Vec<u32> = index
                    .map(|id| {
                        g.class(id)
                            .nodes
                            .iter()
                            .filter_map(|n| if let Op::Var(k) = n.op { Some(k) } else { None })
                            .collect()
                    })
                    .unwrap_or_default();
                let mut extents: Vec<Id> = Vec::new();
                for k in vars {
                    if cands.reach.of(g, m.root) > k {
                        // The new member is primary: every occurrence must agree.
                        if let Some(Binder::Index(n)) = scopes.binder(g, m.root, k) {
                            extents.push(g.find(n));
                        }
                    } else {
                        extents.extend(scopes.extents(g, m.root, k).iter().map(|n| g.find(*n)));
                    }
                }
                extents.sort();
                extents.dedup();
                extents.into_iter().take(cap).map(Binding::Class).collect()
            }
        };
        let mut next = Vec::new();
        for partial in &out {
            for b in &options {
                let mut p = partial.clone();
                p.push((name.clone(), b.clone()));
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Builds the right-hand side for a completed match, or `None` if some
/// shift cannot be realized or the result would be ill-sorted.
pub(crate) fn instantiate(
    rule: &RewriteRule,
    m: &Match,
    extra: &[(Symbol, Binding)],
    g: &EGraph,
    ex: &SizeExtractor,
) -> Option<Rhs> {
    let root_sort = &g.data(m.root).sort;
    if let ApplierKind::BetaSubst { body, arg } = rule.applier {
        let (b, _) = m.subst.get(body)?;
        let (a, _) = m.subst.get(arg)?;
        let expr = substitute(&ex.extract(b).ok()?, &ex.extract(a).ok()?);
        let d = g.data(m.root);
        return Some(Rhs::Term { expr, sort: d.sort.clone(), size: d.size.clone() });
    }
    let rhs = build_rhs(&rule.rhs, m, extra, g, ex)?;
    let (sort, _) = rhs.sort(g)?;
    if !sort.compatible(root_sort) {
        return None;
    }
    Some(rhs)
}

fn build_rhs(p: &Pattern, m: &Match, extra: &[(Symbol, Binding)], g: &EGraph, ex: &SizeExtractor) -> Option<Rhs> {
    match p {
        Pattern::Node(op, kids) => {
            Some(Rhs::Node(op.clone(), kids.iter().map(|k| build_rhs(k, m, extra, g, ex)).collect::<Option<_>>()?))
        }
        Pattern::Var { name, shift: j } => {
            let (base, sort, size) = if let Some((id, k)) = m.subst.get(name) {
                if k == *j {
                    return Some(Rhs::Class(id));
                }
                let base = if k == 0 { ex.extract(id).ok()? } else { m.witness(name)?.clone() };
                (base, g.data(id).sort.clone(), g.data(id).size.clone())
            } else {
                match &extra.iter().find(|(n, _)| n == name)?.1 {
                    Binding::Class(id) if *j == 0 => return Some(Rhs::Class(*id)),
                    Binding::Class(id) => (ex.extract(*id).ok()?, g.data(*id).sort.clone(), g.data(*id).size.clone()),
                    Binding::Term(e, s, z) if *j == 0 => {
                        return Some(Rhs::Term { expr: e.clone(), sort: s.clone(), size: z.clone() })
                    }
                    Binding::Term(e, s, z) => (e.clone(), s.clone(), z.clone()),
                }
            };
            let expr = shift(&base, *j as i64, 0).ok()?;
            Some(Rhs::Term { expr, sort, size })
        }
    }
}

/// A right-hand side ready to union with its root.
#[derive(Clone, Debug)]
pub struct Pending {
    pub root: Id,
    pub rhs: Rhs,
    pub depth: u32,
}

/// Adds the right-hand side and unions it with the root. Returns whether the
/// graph changed.
pub fn apply_match(p: &Pending, g: &mut EGraph) -> Result<bool, ConstConflict> {
    g.set_intro_depth(p.depth);
    let ids_before = g.id_bound();
    let id = p.rhs.add(g);
    let merged = g.union(p.root, id)?;
    Ok(merged || g.id_bound() != ids_before)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub matches: usize,
    pub applied: usize,
    pub enodes: usize,
    pub eclasses: usize,
}

/// Collects every match of every rule on the current graph, applies them all
/// and rebuilds once.
pub fn saturation_step(
    g: &mut EGraph,
    rules: &[RewriteRule],
    policy: &StepPolicy,
) -> Result<StepReport, ConstConflict> {
    let pending = collect(g, rules, policy);
    let mut applied = 0;
    for p in &pending {
        if apply_match(p, g)? {
            applied += 1;
        }
    }
    g.rebuild()?;
    Ok(StepReport { matches: pending.len(), applied, enodes: g.node_count(), eclasses: g.class_count() })
}

/// Every rewrite `rule` would apply to `g` in one step, as (root class,
/// replacement term) pairs. Nothing is added to the graph.
pub fn proposals(g: &EGraph, rule: &RewriteRule, policy: &StepPolicy) -> Vec<(Id, Expr)> {
    let ex = SizeExtractor::new(g);
    collect(g, std::slice::from_ref(rule), policy)
        .into_iter()
        .filter_map(|p| Some((p.root, p.rhs.to_expr(&ex)?)))
        .collect()
}

pub(crate) fn collect(g: &EGraph, rules: &[RewriteRule], policy: &StepPolicy) -> Vec<Pending> {
    let ex = SizeExtractor::new(g);
    let index = OpIndex::new(g);
    let reach = Reach::new(g);
    let mut cands = Candidates::new(g, &ex, &reach);
    let scopes = Scopes::new(g, &reach);
    let mut pending = Vec::new();
    for rule in rules {
        for m in ematch_indexed(rule, g, &ex, policy, &index) {
            let depth = g.data(m.root).intro_depth + u32::from(rule.intro);
            for extra in enumerate_with(rule, &m, g, &mut cands, &scopes, policy.unbound_cap) {
                if let Some(rhs) = instantiate(rule, &m, &extra, g, &ex) {
                    if rhs != Rhs::Class(g.find(m.root)) {
                        pending.push(Pending { root: m.root, rhs, depth });
                    }
                }
            }
        }
    }
    pending
}
