//! Hash-consed e-graph with union-find, deferred congruence repair and
//! per-class analyses (sort, free indices, constant value, size value).

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use num_rational::Rational64;
use thiserror::Error;

use crate::ir::{free_indices, Expr, FreeSet, Func, SizeExpr, Sort, Symbol};
use crate::pattern::{node_size, node_sort};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Id(pub u32);

impl Id {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Node kinds, mirroring the `Expr` constructors. The variant order is the
/// tie-break order used by extraction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Var(u32),
    SizeLit(u64),
    NumLit(Rational64),
    SizeParam(Symbol),
    Input(Symbol),
    Lambda,
    App,
    Build,
    Index,
    IFold,
    Tuple,
    Fst,
    Snd,
    Call(Func),
}

impl Op {
    pub fn arity(&self) -> Option<usize> {
        Some(match self {
            Op::Var(_) | Op::SizeLit(_) | Op::NumLit(_) | Op::SizeParam(_) | Op::Input(_) => 0,
            Op::Lambda | Op::Fst | Op::Snd => 1,
            Op::App | Op::Build | Op::Index | Op::Tuple => 2,
            Op::IFold => 3,
            Op::Call(_) => return None,
        })
    }

    pub fn label(&self) -> String {
        match self {
            Op::Var(i) => format!("%{i}"),
            Op::SizeLit(n) => format!("#{n}"),
            Op::NumLit(r) => crate::ir::print_number(r),
            Op::SizeParam(s) | Op::Input(s) => s.to_string(),
            Op::Lambda => "lam".into(),
            Op::App => "app".into(),
            Op::Build => "build".into(),
            Op::Index => "idx".into(),
            Op::IFold => "ifold".into(),
            Op::Tuple => "tuple".into(),
            Op::Fst => "fst".into(),
            Op::Snd => "snd".into(),
            Op::Call(f) => f.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ENode {
    pub op: Op,
    pub children: Vec<Id>,
}

impl ENode {
    pub fn leaf(op: Op) -> ENode {
        ENode { op, children: Vec::new() }
    }

    pub fn new(op: Op, children: Vec<Id>) -> ENode {
        ENode { op, children }
    }

    /// Splits an expression node into its kind and (unconverted) children.
    pub fn split(e: &Expr) -> (Op, Vec<&Expr>) {
        let op = match e {
            Expr::Lambda(_) => Op::Lambda,
            Expr::App(..) => Op::App,
            Expr::Var(i) => Op::Var(*i),
            Expr::Build(..) => Op::Build,
            Expr::Index(..) => Op::Index,
            Expr::IFold(..) => Op::IFold,
            Expr::Tuple(..) => Op::Tuple,
            Expr::Fst(_) => Op::Fst,
            Expr::Snd(_) => Op::Snd,
            Expr::Call(f, _) => Op::Call(f.clone()),
            Expr::SizeLit(n) => Op::SizeLit(*n),
            Expr::SizeParam(s) => Op::SizeParam(s.clone()),
            Expr::NumLit(r) => Op::NumLit(*r),
            Expr::Input(s) => Op::Input(s.clone()),
        };
        (op, e.children())
    }

    /// Rebuilds an expression from this node's kind and child terms.
    pub fn join(op: &Op, mut kids: Vec<Expr>) -> Expr {
        let mut next = || Box::new(kids.remove(0));
        match op {
            Op::Var(i) => Expr::Var(*i),
            Op::SizeLit(n) => Expr::SizeLit(*n),
            Op::NumLit(r) => Expr::NumLit(*r),
            Op::SizeParam(s) => Expr::SizeParam(s.clone()),
            Op::Input(s) => Expr::Input(s.clone()),
            Op::Lambda => Expr::Lambda(next()),
            Op::App => Expr::App(next(), next()),
            Op::Build => Expr::Build(next(), next()),
            Op::Index => Expr::Index(next(), next()),
            Op::IFold => Expr::IFold(next(), next(), next()),
            Op::Tuple => Expr::Tuple(next(), next()),
            Op::Fst => Expr::Fst(next()),
            Op::Snd => Expr::Snd(next()),
            Op::Call(f) => Expr::Call(f.clone(), kids),
        }
    }
}

/// A constant carried by a class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Const {
    Num(Rational64),
    Size(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("constant conflict: merged classes holding {a:?} and {b:?}")]
pub struct ConstConflict {
    pub a: Const,
    pub b: Const,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassData {
    pub sort: Sort,
    /// Indices free in every member (intersection over members).
    pub free: FreeSet,
    pub constant: Option<Const>,
    /// Symbolic value for size-valued classes.
    pub size: Option<SizeExpr>,
    /// How many idiom-introducing rewrites separate this class from the input.
    pub intro_depth: u32,
}

impl ClassData {
    /// Joins `other` into `self`. Returns whether `self` changed and whether
    /// the result differs from `other` (only for the propagated analyses).
    fn merge(&mut self, other: ClassData) -> Result<(bool, bool), ConstConflict> {
        let mut changed_self = false;
        let mut changed_other = false;

        let sort = self.sort.unify(&other.sort).unwrap_or_else(|| self.sort.clone());
        changed_self |= sort != self.sort;
        changed_other |= sort != other.sort;
        self.sort = sort;

        let free = self.free.intersect(other.free);
        changed_self |= free != self.free;
        changed_other |= free != other.free;
        self.free = free;

        match (&self.constant, &other.constant) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConstConflict { a: a.clone(), b: b.clone() });
            }
            (None, Some(_)) => {
                self.constant = other.constant.clone();
                changed_self = true;
            }
            (Some(_), None) => changed_other = true,
            _ => {}
        }

        match (&self.size, &other.size) {
            (None, Some(_)) => {
                self.size = other.size.clone();
                changed_self = true;
            }
            (Some(_), None) => changed_other = true,
            _ => {}
        }

        self.intro_depth = self.intro_depth.min(other.intro_depth);
        Ok((changed_self, changed_other))
    }
}

#[derive(Clone, Debug)]
pub struct EClass {
    pub id: Id,
    pub nodes: Vec<ENode>,
    pub data: ClassData,
    parents: Vec<(ENode, Id)>,
}

impl EClass {
    pub fn parents(&self) -> impl Iterator<Item = &(ENode, Id)> {
        self.parents.iter()
    }
}

#[derive(Clone, Debug, Default)]
pub struct EGraph {
    uf: Vec<u32>,
    classes: Vec<Option<EClass>>,
    memo: HashMap<ENode, Id>,
    pending: Vec<(ENode, Id)>,
    analysis_pending: Vec<(ENode, Id)>,
    depth_for_new: u32,
    inputs: BTreeMap<Symbol, Sort>,
    roots: Vec<Id>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("class {0} has no finite member")]
pub struct Unextractable(pub Id);

impl EGraph {
    pub fn new() -> EGraph {
        EGraph::default()
    }

    /// A graph in which `Input` nodes take their sorts from `inputs`.
    pub fn with_inputs(inputs: BTreeMap<Symbol, Sort>) -> EGraph {
        EGraph { inputs, ..EGraph::default() }
    }

    pub fn inputs(&self) -> &BTreeMap<Symbol, Sort> {
        &self.inputs
    }

    /// Adds a top-level program term. Roots are the only classes known to
    /// sit outside every binder.
    pub fn add_root(&mut self, e: &Expr) -> Id {
        let id = self.add_expr(e);
        self.roots.push(id);
        id
    }

    /// The registered roots, or every class without parents if none were
    /// registered.
    pub fn roots(&self) -> Vec<Id> {
        if self.roots.is_empty() {
            self.classes().filter(|c| c.parents.is_empty()).map(|c| c.id).collect()
        } else {
            let mut v: Vec<Id> = self.roots.iter().map(|r| self.find(*r)).collect();
            v.sort();
            v.dedup();
            v
        }
    }

    pub fn find(&self, mut id: Id) -> Id {
        while self.uf[id.index()] != id.0 {
            id = Id(self.uf[id.index()]);
        }
        id
    }

    fn find_mut(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut cur = id;
        while cur != root {
            let next = Id(self.uf[cur.index()]);
            self.uf[cur.index()] = root.0;
            cur = next;
        }
        root
    }

    /// Intro depth assigned to classes created from now on.
    pub fn set_intro_depth(&mut self, depth: u32) {
        self.depth_for_new = depth;
    }

    pub fn canonicalize(&self, node: &ENode) -> ENode {
        ENode { op: node.op.clone(), children: node.children.iter().map(|c| self.find(*c)).collect() }
    }

    pub fn lookup(&self, node: &ENode) -> Option<Id> {
        self.memo.get(&self.canonicalize(node)).map(|id| self.find(*id))
    }

    pub fn lookup_expr(&self, e: &Expr) -> Option<Id> {
        let (op, kids) = ENode::split(e);
        let children = kids.into_iter().map(|k| self.lookup_expr(k)).collect::<Option<Vec<_>>>()?;
        self.lookup(&ENode { op, children })
    }

    pub fn add(&mut self, node: ENode) -> Id {
        let node = self.canonicalize(&node);
        if let Some(id) = self.memo.get(&node) {
            return self.find(*id);
        }
        let id = Id(self.uf.len() as u32);
        let data = self.make(&node, self.depth_for_new);
        for c in &node.children {
            self.class_mut(*c).parents.push((node.clone(), id));
        }
        self.uf.push(id.0);
        self.classes.push(Some(EClass { id, nodes: vec![node.clone()], data, parents: Vec::new() }));
        self.memo.insert(node, id);
        id
    }

    /// Adds every node of `e`, returning its class.
    pub fn add_expr(&mut self, e: &Expr) -> Id {
        let (op, kids) = ENode::split(e);
        let children = kids.into_iter().map(|k| self.add_expr(k)).collect();
        self.add(ENode { op, children })
    }

    pub fn union(&mut self, a: Id, b: Id) -> Result<bool, ConstConflict> {
        let mut a = self.find_mut(a);
        let mut b = self.find_mut(b);
        if a == b {
            return Ok(false);
        }
        let size = |g: &EGraph, x: Id| g.class(x).parents.len() + g.class(x).nodes.len();
        if size(self, a) < size(self, b) {
            std::mem::swap(&mut a, &mut b);
        }
        let other = self.classes[b.index()].take().expect("canonical class");
        self.uf[b.index()] = a.0;
        self.pending.extend(other.parents.iter().cloned());
        let class = self.classes[a.index()].as_mut().expect("canonical class");
        let (changed_a, changed_b) = class.data.merge(other.data)?;
        if changed_a {
            self.analysis_pending.extend(class.parents.iter().cloned());
        }
        if changed_b {
            self.analysis_pending.extend(other.parents.iter().cloned());
        }
        class.nodes.extend(other.nodes);
        class.parents.extend(other.parents);
        Ok(true)
    }

    /// Restores the hashcons and congruence invariants and propagates
    /// analyses to a fixpoint.
    pub fn rebuild(&mut self) -> Result<(), ConstConflict> {
        while !self.pending.is_empty() || !self.analysis_pending.is_empty() {
            while let Some((node, class)) = self.pending.pop() {
                let node = self.canonicalize(&node);
                if let Some(old) = self.memo.insert(node, class) {
                    self.union(old, class)?;
                }
            }
            while let Some((node, class)) = self.analysis_pending.pop() {
                let id = self.find_mut(class);
                let data = self.make(&self.canonicalize(&node), u32::MAX);
                let c = self.classes[id.index()].as_mut().expect("canonical class");
                let (changed, _) = c.data.merge(data)?;
                if changed {
                    self.analysis_pending.extend(c.parents.iter().cloned());
                }
            }
        }
        for i in 0..self.classes.len() {
            if self.classes[i].is_none() {
                continue;
            }
            let mut nodes = std::mem::take(&mut self.classes[i].as_mut().unwrap().nodes);
            for n in nodes.iter_mut() {
                *n = self.canonicalize(n);
            }
            nodes.sort();
            nodes.dedup();
            self.classes[i].as_mut().unwrap().nodes = nodes;
        }
        // Drop memo entries keyed by stale nodes so that the map size equals
        // the number of canonical nodes.
        let uf = &self.uf;
        let canonical = |n: &ENode| n.children.iter().all(|c| uf[c.index()] == c.0);
        self.memo.retain(|n, _| canonical(n));
        for v in self.memo.values_mut() {
            let mut r = *v;
            while self.uf[r.index()] != r.0 {
                r = Id(self.uf[r.index()]);
            }
            *v = r;
        }
        Ok(())
    }

    fn make(&self, node: &ENode, depth: u32) -> ClassData {
        let free = match node.op {
            Op::Var(i) => FreeSet::single(i),
            Op::Lambda => self.class(node.children[0]).data.free.unbind(),
            _ => node.children.iter().fold(FreeSet::EMPTY, |acc, c| acc.union(self.class(*c).data.free)),
        };
        let sorts: Vec<Sort> = node.children.iter().map(|c| self.class(*c).data.sort.clone()).collect();
        let sizes: Vec<Option<SizeExpr>> = node.children.iter().map(|c| self.class(*c).data.size.clone()).collect();
        let sort = match &node.op {
            Op::Input(name) => self.inputs.get(name).cloned().unwrap_or(Sort::Unknown),
            op => node_sort(op, &sorts, &sizes).unwrap_or(Sort::Unknown),
        };
        let size = node_size(&node.op, &sizes);
        let constant = match &node.op {
            Op::NumLit(r) => Some(Const::Num(*r)),
            Op::SizeLit(n) => Some(Const::Size(*n)),
            _ => None,
        };
        ClassData { sort, free, constant, size, intro_depth: depth }
    }

    pub fn class(&self, id: Id) -> &EClass {
        let id = self.find(id);
        self.classes[id.index()].as_ref().expect("canonical class")
    }

    fn class_mut(&mut self, id: Id) -> &mut EClass {
        let id = self.find(id);
        self.classes[id.index()].as_mut().expect("canonical class")
    }

    pub fn data(&self, id: Id) -> &ClassData {
        &self.class(id).data
    }

    /// Canonical classes in id order.
    pub fn classes(&self) -> impl Iterator<Item = &EClass> {
        self.classes.iter().flatten()
    }

    /// Number of ids ever allocated (canonical or not).
    pub fn id_bound(&self) -> usize {
        self.uf.len()
    }

    pub fn class_count(&self) -> usize {
        self.classes().count()
    }

    /// Number of distinct canonical e-nodes.
    pub fn node_count(&self) -> usize {
        self.classes().map(|c| c.nodes.len()).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.pending.is_empty() && self.analysis_pending.is_empty()
    }

    /// Smallest member of `id`.
    pub fn extract_any(&self, id: Id) -> Result<Expr, Unextractable> {
        SizeExtractor::new(self).extract(id)
    }

    /// Graphviz rendering, deterministic for a given graph.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph egraph {\n  compound=true;\n");
        for c in self.classes() {
            let _ = writeln!(out, "  subgraph cluster_{} {{\n    label=\"{} : {}\";", c.id.0, c.id, c.data.sort);
            for (i, n) in c.nodes.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "    n{}_{} [label=\"{}\", shape=record];",
                    c.id.0,
                    i,
                    n.op.label().replace('"', "'")
                );
            }
            out.push_str("  }\n");
        }
        for c in self.classes() {
            for (i, n) in c.nodes.iter().enumerate() {
                for (j, k) in n.children.iter().enumerate() {
                    let k = self.find(*k);
                    let _ =
                        writeln!(out, "  n{}_{} -> n{}_0 [lhead=cluster_{}, label=\"{}\"];", c.id.0, i, k.0, k.0, j);
                }
            }
        }
        out.push_str("}\n");
        out
    }

    /// Checks the hashcons and congruence invariants. Intended for tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.is_clean() {
            return Err("graph has pending work".into());
        }
        let mut seen: HashMap<ENode, Id> = HashMap::new();
        for c in self.classes() {
            if self.find(c.id) != c.id {
                return Err(format!("class {} is not canonical", c.id));
            }
            for n in &c.nodes {
                let canon = self.canonicalize(n);
                if &canon != n {
                    return Err(format!("node {n:?} in {} is not canonical", c.id));
                }
                if let Some(other) = seen.insert(canon.clone(), c.id) {
                    return Err(format!("node {n:?} in both {} and {}", other, c.id));
                }
                match self.memo.get(&canon) {
                    Some(id) if self.find(*id) == c.id => {}
                    _ => return Err(format!("memo misses node {n:?} of {}", c.id)),
                }
            }
        }
        if self.memo.len() != seen.len() {
            return Err(format!("memo has {} entries for {} nodes", self.memo.len(), seen.len()));
        }
        Ok(())
    }
}

/// One past the highest free index, per class (least over members).
#[derive(Debug, Default)]
pub struct Reach {
    class: HashMap<Id, u32>,
}

impl Reach {
    pub fn new(g: &EGraph) -> Reach {
        let mut r = Reach::default();
        loop {
            let mut changed = false;
            for c in g.classes() {
                let best = c.nodes.iter().map(|n| r.node(g, n)).min().unwrap_or(u32::MAX);
                if best < r.of(g, c.id) {
                    r.class.insert(c.id, best);
                    changed = true;
                }
            }
            if !changed {
                return r;
            }
        }
    }

    /// `u32::MAX` for classes with no finite member.
    pub fn of(&self, g: &EGraph, id: Id) -> u32 {
        self.class.get(&g.find(id)).copied().unwrap_or(u32::MAX)
    }

    pub fn node(&self, g: &EGraph, n: &ENode) -> u32 {
        match n.op {
            Op::Var(k) => k + 1,
            Op::Lambda => {
                let b = self.of(g, n.children[0]);
                if b == u32::MAX {
                    b
                } else {
                    b.saturating_sub(1)
                }
            }
            _ => n.children.iter().map(|k| self.of(g, *k)).max().unwrap_or(0),
        }
    }

    /// Whether `n` is no more open than the rest of its class `id`.
    pub fn primary(&self, g: &EGraph, id: Id, n: &ENode) -> bool {
        self.node(g, n) <= self.of(g, id)
    }
}

/// Minimum-AST-size member of every class, computed once for a frozen graph.
pub struct SizeExtractor<'g> {
    graph: &'g EGraph,
    best: Vec<Option<(u64, ENode)>>,
    witnesses: RefCell<HashMap<(Id, u32), Option<Expr>>>,
}

impl<'g> SizeExtractor<'g> {
    pub fn new(graph: &'g EGraph) -> SizeExtractor<'g> {
        let mut best: Vec<Option<(u64, ENode)>> = vec![None; graph.id_bound()];
        loop {
            let mut changed = false;
            for c in graph.classes() {
                for n in &c.nodes {
                    let mut total: u64 = 1;
                    let mut ok = true;
                    for k in &n.children {
                        match &best[graph.find(*k).index()] {
                            Some((s, _)) => total = total.saturating_add(*s),
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let slot = &mut best[c.id.index()];
                    let better = match slot {
                        None => true,
                        Some((s, m)) => total < *s || (total == *s && n < m),
                    };
                    if better {
                        *slot = Some((total, n.clone()));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        SizeExtractor { graph, best, witnesses: RefCell::new(HashMap::new()) }
    }

    pub fn size(&self, id: Id) -> Option<u64> {
        self.best[self.graph.find(id).index()].as_ref().map(|(s, _)| *s)
    }

    pub fn extract(&self, id: Id) -> Result<Expr, Unextractable> {
        let id = self.graph.find(id);
        let (_, node) = self.best[id.index()].as_ref().ok_or(Unextractable(id))?;
        let kids = node.children.iter().map(|k| self.extract(*k)).collect::<Result<Vec<_>, _>>()?;
        Ok(ENode::join(&node.op, kids))
    }

    /// A member of `id` in which none of the free indices `0..k` occur.
    pub fn witness(&self, id: Id, k: u32) -> Option<Expr> {
        let key = (self.graph.find(id), k);
        if let Some(w) = self.witnesses.borrow().get(&key) {
            return w.clone();
        }
        let w = self.find_witness(key.0, k);
        self.witnesses.borrow_mut().insert(key, w.clone());
        w
    }

    fn find_witness(&self, id: Id, k: u32) -> Option<Expr> {
        if k == 0 {
            return self.extract(id).ok();
        }
        if !self.graph.data(id).free.avoids_below(k) {
            return None;
        }
        if let Ok(e) = self.extract(id) {
            if free_indices(&e).iter().all(|i| *i >= k) {
                return Some(e);
            }
        }
        let mut search = WitnessSearch { ex: self, memo: HashMap::new() };
        search.find(self.graph.find(id), 0, k).map(|(_, e)| e)
    }
}

/// Smallest member avoiding the index window `[lo, lo + k)`, where `lo`
/// grows by one under every lambda.
struct WitnessSearch<'a, 'g> {
    ex: &'a SizeExtractor<'g>,
    memo: HashMap<(Id, u32), Option<(u64, Expr)>>,
}

impl WitnessSearch<'_, '_> {
    fn find(&mut self, id: Id, lo: u32, k: u32) -> Option<(u64, Expr)> {
        let g = self.ex.graph;
        let id = g.find(id);
        if let Some(r) = self.memo.get(&(id, lo)) {
            return r.clone();
        }
        // Cycles through an in-progress class are treated as failures.
        self.memo.insert((id, lo), None);
        // Classes whose every member avoids the window can use the plain
        // smallest member.
        let free = g.data(id).free;
        let window_clear = (lo..lo + k).all(|i| !free.contains(i));
        if window_clear {
            if let Ok(e) = self.ex.extract(id) {
                if free_indices(&e).iter().all(|i| *i < lo || *i >= lo + k) {
                    let r = Some((self.ex.size(id).unwrap_or(u64::MAX), e));
                    self.memo.insert((id, lo), r.clone());
                    return r;
                }
            }
        }
        let mut best: Option<(u64, Expr)> = None;
        for n in &g.class(id).nodes {
            if let Op::Var(i) = n.op {
                if i >= lo && i < lo + k {
                    continue;
                }
            }
            let child_lo = if n.op == Op::Lambda { lo + 1 } else { lo };
            let mut total = 1u64;
            let mut kids = Vec::new();
            let mut ok = true;
            for c in &n.children {
                match self.find(*c, child_lo, k) {
                    Some((s, e)) => {
                        total = total.saturating_add(s);
                        kids.push(e);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && best.as_ref().is_none_or(|(s, _)| total < *s) {
                best = Some((total, ENode::join(&n.op, kids)));
            }
        }
        self.memo.insert((id, lo), best.clone());
        best
    }
}
