use std::collections::{BTreeMap, HashMap};

use idiomsat::cost::{CostModel, Target};
use idiomsat::egraph::{EGraph, ENode, Id, Op};
use idiomsat::extract::Extractor;
use idiomsat::ir::{parse_sort, sym, Expr, Func, Sort, Symbol};
use idiomsat::Rational;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs() -> BTreeMap<Symbol, Sort> {
    let f = parse_sort("f64").unwrap();
    let v = parse_sort("(arr f64 N)").unwrap();
    [("a", &f), ("b", &f), ("c", &f), ("X", &v), ("Y", &v)].into_iter().map(|(n, s)| (sym(n), s.clone())).collect()
}

/// Union-find with congruence closure by brute-force fixpoint.
struct Naive {
    parent: Vec<usize>,
}

impl Naive {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[a] = b;
        }
        a != b
    }

    fn close(&mut self, nodes: &[(Op, Vec<Id>, Id)]) {
        loop {
            let mut seen: HashMap<(Op, Vec<usize>), usize> = HashMap::new();
            let mut changed = false;
            for (op, kids, id) in nodes {
                let key = (op.clone(), kids.iter().map(|k| self.find(k.index())).collect());
                match seen.get(&key) {
                    Some(&other) => changed |= self.union(other, id.index()),
                    None => {
                        seen.insert(key, id.index());
                    }
                }
            }
            if !changed {
                return;
            }
        }
    }
}

fn random_node(rng: &mut ChaCha8Rng, ids: &[Id]) -> ENode {
    let pick = |rng: &mut ChaCha8Rng| ids[rng.gen_range(0..ids.len())];
    if ids.is_empty() || rng.gen_bool(0.2) {
        return match rng.gen_range(0..3) {
            0 => ENode::leaf(Op::Input(sym(["a", "b", "c"][rng.gen_range(0..3)]))),
            1 => ENode::leaf(Op::NumLit(Rational64::from_integer(rng.gen_range(0..4)))),
            _ => ENode::leaf(Op::Var(rng.gen_range(0..2))),
        };
    }
    match rng.gen_range(0..5) {
        0 => ENode::new(Op::Call(Func::Add), vec![pick(rng), pick(rng)]),
        1 => ENode::new(Op::Call(Func::Mul), vec![pick(rng), pick(rng)]),
        2 => ENode::new(Op::Tuple, vec![pick(rng), pick(rng)]),
        3 => ENode::new(Op::Fst, vec![pick(rng)]),
        _ => ENode::new(Op::Lambda, vec![pick(rng)]),
    }
}

/// Random add/union/rebuild workload checked against a naive congruence
/// closure. Panics on any violation.
pub fn stress(seed: u64, ops: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = EGraph::with_inputs(inputs());
    let mut ids: Vec<Id> = Vec::new();
    let mut nodes: Vec<(Op, Vec<Id>, Id)> = Vec::new();
    let mut unions: Vec<(Id, Id)> = Vec::new();
    for _ in 0..ops {
        match rng.gen_range(0..20) {
            0..=11 => {
                let n = random_node(&mut rng, &ids);
                let id = g.add(n.clone());
                nodes.push((n.op, n.children, id));
                ids.push(id);
            }
            12..=18 if !ids.is_empty() => {
                let (a, b) = (ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())]);
                // Rewrites only ever merge classes of one sort. Literal classes
                // stay apart so that congruence cannot produce a conflict.
                let (da, db) = (g.data(a), g.data(b));
                if da.sort == db.sort && da.constant.is_none() && db.constant.is_none() {
                    g.union(a, b).unwrap();
                    unions.push((a, b));
                }
            }
            _ => {
                g.rebuild().unwrap();
                g.check_invariants().unwrap();
            }
        }
    }
    g.rebuild().unwrap();
    g.check_invariants().unwrap();

    assert!(g.class_count() * 5 < g.id_bound() * 4, "workload merged too little");
    let mut naive = Naive { parent: (0..g.id_bound()).collect() };
    for (a, b) in &unions {
        naive.union(a.index(), b.index());
    }
    naive.close(&nodes);
    let mut fwd: HashMap<usize, Id> = HashMap::new();
    let mut back: HashMap<Id, usize> = HashMap::new();
    for i in 0..g.id_bound() {
        let (n, e) = (naive.find(i), g.find(Id(i as u32)));
        assert_eq!(*fwd.entry(n).or_insert(e), e, "graph splits a naive class (id {i})");
        assert_eq!(*back.entry(e).or_insert(n), n, "graph merges beyond the naive closure (id {i})");
    }
}

fn random_float_term(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..5) {
            0 => Expr::num(rng.gen_range(1..3)),
            k => Expr::input(["a", "b", "c", "a"][k - 1]),
        };
    }
    let vec = |rng: &mut ChaCha8Rng| Expr::input(["X", "Y"][rng.gen_range(0..2)]);
    match rng.gen_range(0..3) {
        0 => Expr::add(random_float_term(rng, depth - 1), random_float_term(rng, depth - 1)),
        1 => Expr::mul(random_float_term(rng, depth - 1), random_float_term(rng, depth - 1)),
        _ => Expr::call(Func::Dot, vec![vec(rng), vec(rng)]),
    }
}

fn acyclic(g: &EGraph) -> bool {
    fn visit(g: &EGraph, c: Id, state: &mut HashMap<Id, bool>) -> bool {
        match state.get(&c) {
            Some(true) => return true,
            Some(false) => return false,
            None => {}
        }
        state.insert(c, false);
        for n in &g.class(c).nodes {
            if !n.children.iter().all(|k| visit(g, g.find(*k), state)) {
                return false;
            }
        }
        state.insert(c, true);
        true
    }
    let mut state = HashMap::new();
    g.classes().all(|c| visit(g, c.id, &mut state))
}

/// Every term a class represents, or `None` past `cap` terms.
pub fn all_terms(g: &EGraph, c: Id, cap: usize) -> Option<Vec<Expr>> {
    let mut out = Vec::new();
    for n in &g.class(c).nodes {
        let mut partial: Vec<Vec<Expr>> = vec![Vec::new()];
        for k in &n.children {
            let kids = all_terms(g, *k, cap)?;
            partial = partial
                .iter()
                .flat_map(|p| kids.iter().map(move |t| p.iter().cloned().chain([t.clone()]).collect()))
                .collect();
            if partial.len() > cap {
                return None;
            }
        }
        out.extend(partial.into_iter().map(|kids| ENode::join(&n.op, kids)));
        if out.len() > cap {
            return None;
        }
    }
    Some(out)
}

pub fn random_dag(seed: u64) -> Option<(EGraph, Id)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = EGraph::with_inputs(inputs());
    let mut roots = Vec::new();
    for _ in 0..rng.gen_range(2..6) {
        roots.push(g.add_expr(&random_float_term(&mut rng, 3)));
    }
    g.rebuild().unwrap();
    let floats: Vec<Id> = g.classes().filter(|c| c.data.sort == Sort::Float).map(|c| c.id).collect();
    for _ in 0..rng.gen_range(4..16) {
        let (a, b) = (floats[rng.gen_range(0..floats.len())], floats[rng.gen_range(0..floats.len())]);
        let mut next = g.clone();
        if next.union(a, b).is_ok() && next.rebuild().is_ok() && acyclic(&next) {
            g = next;
        }
    }
    let root = g.find(roots[rng.gen_range(0..roots.len())]);
    (g.class_count() <= 20).then_some((g, root))
}

/// Compares extraction on `random_dag(seed)` with exhaustive enumeration.
/// `Ok(None)` when the case is skipped as too large.
pub fn extraction_vs_brute_force(seed: u64) -> Result<Option<usize>, String> {
    let Some((g, root)) = random_dag(seed) else { return Ok(None) };
    let Some(terms) = all_terms(&g, root, 20_000) else { return Ok(None) };
    let model = CostModel::new(Target::Blas, [(sym("N"), 4)].into_iter().collect());
    let best = terms.iter().map(|t| model.cost::<Rational>(t, g.inputs()).unwrap()).min().unwrap();
    let (e, cost) = Extractor::<Rational>::new(&g, &model).extract(root).map_err(|e| e.to_string())?;
    if cost != best {
        return Err(format!("seed {seed}: extracted cost {cost}, brute force {best}"));
    }
    if model.cost::<Rational>(&e, g.inputs()).unwrap() != cost {
        return Err(format!("seed {seed}: reported cost differs from the term's cost"));
    }
    if g.lookup_expr(&e) != Some(root) {
        return Err(format!("seed {seed}: extracted term is not in the root class"));
    }
    Ok(Some(terms.len()))
}
