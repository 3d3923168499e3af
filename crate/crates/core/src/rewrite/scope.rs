//! Which indices each class can mention, and which binders surround it.
//!
//! Classes are shared between contexts, and expanding rewrites add members
//! that only make sense under binders some occurrences lack. A member whose
//! free indices reach further than the class's least open member is treated
//! as context-dependent: extraction never picks it.

use std::collections::HashMap;

use crate::egraph::{EGraph, Id, Op, Reach};

/// Scopes deeper than this are truncated, which only ever hides binders.
const MAX_DEPTH: usize = 64;

/// Nothing looks further out than the highest index in the graph, and cycles
/// through binders would otherwise grow scopes up to `MAX_DEPTH`.
fn depth_bound(g: &EGraph) -> usize {
    let top = g
        .classes()
        .flat_map(|c| &c.nodes)
        .filter_map(|n| if let Op::Var(k) = n.op { Some(k as usize + 1) } else { None })
        .max()
        .unwrap_or(0);
    top.min(MAX_DEPTH)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binder {
    /// The index of a `build` or `ifold` with this extent class.
    Index(Id),
    Other,
}

impl Binder {
    fn meet(self, other: Binder) -> Binder {
        if self == other {
            self
        } else {
            Binder::Other
        }
    }
}

/// What one index refers to across occurrences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    /// Agreed binder, `Other` if occurrences differ.
    pub all: Binder,
    /// Every extent seen, sorted.
    pub any: Vec<Id>,
}

impl Slot {
    fn new(b: Binder) -> Slot {
        let any = match b {
            Binder::Index(n) => vec![n],
            Binder::Other => Vec::new(),
        };
        Slot { all: b, any }
    }

    fn join(&self, other: &Slot) -> Slot {
        let mut any = self.any.clone();
        any.extend(&other.any);
        any.sort();
        any.dedup();
        Slot { all: self.all.meet(other.all), any }
    }
}

/// Innermost binder first. Entry `k` covers every occurrence at least
/// `k + 1` binders deep.
pub type Scope = Vec<Slot>;

fn join(a: &Scope, b: &Scope) -> Scope {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) => x.join(y),
            (Some(x), None) | (None, Some(x)) => x.clone(),
            (None, None) => unreachable!(),
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct Scopes {
    scope: HashMap<Id, Scope>,
}

impl Scopes {
    pub fn new(g: &EGraph, reach: &Reach) -> Scopes {
        // How each lambda class is consumed decides what its parameter is.
        let bound = depth_bound(g);
        let mut lam: HashMap<Id, Binder> = HashMap::new();
        let mut scope: HashMap<Id, Scope> = HashMap::new();
        let mut work = Vec::new();
        for r in g.roots() {
            scope.insert(r, Vec::new());
            work.push(r);
        }
        while let Some(c) = work.pop() {
            let s = scope[&c].clone();
            let mut updates: Vec<(Id, Scope)> = Vec::new();
            for n in &g.class(c).nodes {
                // Only members extraction can pick are followed.
                if !reach.primary(g, c, n) || reach.node(g, n) as usize > s.len() {
                    continue;
                }
                let kids: Vec<Id> = n.children.iter().map(|k| g.find(*k)).collect();
                for (pos, &k) in kids.iter().enumerate() {
                    let b = match (&n.op, pos) {
                        (Op::Build, 1) | (Op::IFold, 2) => Binder::Index(kids[0]),
                        _ => Binder::Other,
                    };
                    let merged = lam.get(&k).map_or(b, |old| old.meet(b));
                    if lam.insert(k, merged) != Some(merged) && scope.contains_key(&k) {
                        work.push(k);
                    }
                    let mut child = s.clone();
                    if n.op == Op::Lambda {
                        match lam.get(&c) {
                            Some(b) => child.insert(0, Slot::new(*b)),
                            None => continue,
                        }
                    }
                    child.truncate(bound);
                    updates.push((k, child));
                }
            }
            for (k, child) in updates {
                let next = match scope.get(&k) {
                    Some(old) => join(old, &child),
                    None => child,
                };
                if scope.get(&k) != Some(&next) {
                    scope.insert(k, next);
                    work.push(k);
                }
            }
        }
        Scopes { scope }
    }

    /// Deepest binder nesting `id` occurs under, capped at one past the
    /// highest index in the graph.
    pub fn depth(&self, g: &EGraph, id: Id) -> usize {
        self.scope.get(&g.find(id)).map_or(0, |s| s.len())
    }

    /// What `%k` refers to at `id`, if every occurrence binding it agrees.
    pub fn binder(&self, g: &EGraph, id: Id, k: u32) -> Option<Binder> {
        Some(self.scope.get(&g.find(id))?.get(k as usize)?.all)
    }

    /// Extents of the index binders `%k` refers to at some occurrence of `id`.
    pub fn extents(&self, g: &EGraph, id: Id, k: u32) -> &[Id] {
        self.scope.get(&g.find(id)).and_then(|s| s.get(k as usize)).map_or(&[], |s| s.any.as_slice())
    }
}
