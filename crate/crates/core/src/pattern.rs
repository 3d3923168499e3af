//! Rule patterns: terms with metavariables, where `?x^k` stands for a term
//! shifted up `k` times.

use std::fmt;

use crate::egraph::{EGraph, ENode, Id, Op, SizeExtractor};
use crate::ir::{
    library_sort, parse_expr, read_sexps, shift, sort_app, sort_build, sort_fst, sort_ifold, sort_index, sort_snd, sym,
    syntax_err, Expr, Func, ParseError, SExp, SizeExpr, Sort, SortError, Symbol,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    Var { name: Symbol, shift: u32 },
    Node(Op, Vec<Pattern>),
}

impl Pattern {
    pub fn var(name: &str, shift: u32) -> Pattern {
        Pattern::Var { name: sym(name), shift }
    }

    pub fn parse(text: &str) -> Result<Pattern, ParseError> {
        let mut all = read_sexps(text)?;
        if all.len() != 1 {
            return syntax_err(crate::ir::Pos { line: 1, col: 1 }, "expected exactly one pattern");
        }
        from_sexp(&all.pop().unwrap())
    }

    /// Metavariables in first-occurrence order with their shift.
    pub fn vars(&self) -> Vec<(Symbol, u32)> {
        fn go(p: &Pattern, out: &mut Vec<(Symbol, u32)>) {
            match p {
                Pattern::Var { name, shift } => {
                    if !out.iter().any(|(n, _)| n == name) {
                        out.push((name.clone(), *shift));
                    }
                }
                Pattern::Node(_, kids) => kids.iter().for_each(|k| go(k, out)),
            }
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }

    /// Every occurrence of every metavariable, with shifts.
    pub fn occurrences(&self) -> Vec<(Symbol, u32)> {
        fn go(p: &Pattern, out: &mut Vec<(Symbol, u32)>) {
            match p {
                Pattern::Var { name, shift } => out.push((name.clone(), *shift)),
                Pattern::Node(_, kids) => kids.iter().for_each(|k| go(k, out)),
            }
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }

    /// Replaces each metavariable by a term at root level, shifting it as
    /// annotated.
    pub fn instantiate(&self, lookup: &dyn Fn(&str) -> Expr) -> Expr {
        match self {
            Pattern::Var { name, shift: k } => shift(&lookup(name), *k as i64, 0).expect("up-shift"),
            Pattern::Node(op, kids) => ENode::join(op, kids.iter().map(|k| k.instantiate(lookup)).collect()),
        }
    }

    fn from_expr(e: &Expr) -> Pattern {
        let (op, kids) = ENode::split(e);
        Pattern::Node(op, kids.into_iter().map(Pattern::from_expr).collect())
    }
}

fn from_sexp(s: &SExp) -> Result<Pattern, ParseError> {
    match s {
        SExp::Atom(a, pos) => {
            if let Some(v) = a.strip_prefix('?') {
                let (name, k) = match v.split_once('^') {
                    Some((n, k)) => match k.parse() {
                        Ok(k) => (n, k),
                        Err(_) => return syntax_err(*pos, format!("bad shift in `{a}`")),
                    },
                    None => (v, 0),
                };
                if !crate::ir::is_ident(name) {
                    return syntax_err(*pos, format!("bad metavariable `{a}`"));
                }
                return Ok(Pattern::var(name, k));
            }
            parse_expr(a).map(|e| Pattern::from_expr(&e))
        }
        SExp::List(items, pos) => {
            let head = match items.first() {
                Some(SExp::Atom(h, _)) => h.as_str(),
                _ => return syntax_err(*pos, "expected a keyword after `(`"),
            };
            let (op, args) = match head {
                "lam" => (Op::Lambda, &items[1..]),
                "app" => (Op::App, &items[1..]),
                "build" => (Op::Build, &items[1..]),
                "idx" => (Op::Index, &items[1..]),
                "ifold" => (Op::IFold, &items[1..]),
                "tuple" => (Op::Tuple, &items[1..]),
                "fst" => (Op::Fst, &items[1..]),
                "snd" => (Op::Snd, &items[1..]),
                "+" | "*" => (Op::Call(Func::from_name(head)), &items[1..]),
                "call" => match items.get(1) {
                    Some(SExp::Atom(n, _)) => (Op::Call(Func::from_name(n)), &items[2..]),
                    _ => return syntax_err(*pos, "`call` needs a function name"),
                },
                other => return syntax_err(*pos, format!("unknown form `{other}`")),
            };
            if let Some(n) = op.arity() {
                if n != args.len() {
                    return syntax_err(*pos, format!("`{head}` takes {n} operands"));
                }
            }
            let kids = args.iter().map(from_sexp).collect::<Result<_, _>>()?;
            Ok(Pattern::Node(op, kids))
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var { name, shift: 0 } => write!(f, "?{name}"),
            Pattern::Var { name, shift } => write!(f, "?{name}^{shift}"),
            Pattern::Node(op, kids) if kids.is_empty() && op.arity() == Some(0) => {
                let e = ENode::join(op, Vec::new());
                write!(f, "{}", crate::ir::print_expr(&e))
            }
            Pattern::Node(op, kids) => {
                match op {
                    Op::Call(func) => write!(f, "(call {}", func.name())?,
                    other => write!(f, "({}", other.label())?,
                }
                for k in kids {
                    write!(f, " {k}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Variable bindings of one match. `shift` records the annotation the
/// variable carried in the left-hand side.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Subst {
    entries: Vec<(Symbol, Id, u32)>,
}

impl Subst {
    pub fn get(&self, name: &str) -> Option<(Id, u32)> {
        self.entries.iter().find(|(n, _, _)| &**n == name).map(|(_, id, k)| (*id, *k))
    }

    pub fn insert(&mut self, name: Symbol, id: Id, shift: u32) {
        self.entries.retain(|(n, _, _)| *n != name);
        self.entries.push((name, id, shift));
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Symbol, Id, u32)> {
        self.entries.iter()
    }

    pub fn canonicalize(&mut self, g: &EGraph) {
        for e in self.entries.iter_mut() {
            e.1 = g.find(e.1);
        }
    }
}

/// All ways `p` matches class `id`. Shift-annotated variables only bind
/// classes that have a member free of the indices below their shift.
pub fn match_class(p: &Pattern, g: &EGraph, ex: &SizeExtractor, id: Id) -> Vec<Subst> {
    let mut out = Vec::new();
    search(p, g, ex, g.find(id), Subst::default(), &mut |s| out.push(s));
    out
}

fn search(p: &Pattern, g: &EGraph, ex: &SizeExtractor, id: Id, s: Subst, k: &mut dyn FnMut(Subst)) {
    match p {
        Pattern::Var { name, shift } => match s.get(name) {
            Some((bound, _)) => {
                if g.find(bound) == id {
                    k(s)
                }
            }
            None => {
                if *shift > 0 && ex.witness(id, *shift).is_none() {
                    return;
                }
                let mut s = s;
                s.insert(name.clone(), id, *shift);
                k(s)
            }
        },
        Pattern::Node(op, kids) => {
            for n in &g.class(id).nodes {
                if &n.op != op || n.children.len() != kids.len() {
                    continue;
                }
                search_kids(kids, &n.children, g, ex, s.clone(), k);
            }
        }
    }
}

fn search_kids(pats: &[Pattern], ids: &[Id], g: &EGraph, ex: &SizeExtractor, s: Subst, k: &mut dyn FnMut(Subst)) {
    match pats.split_first() {
        None => k(s),
        Some((p, rest)) => search(p, g, ex, g.find(ids[0]), s, &mut |s2| search_kids(rest, &ids[1..], g, ex, s2, k)),
    }
}

/// Sort a pattern would have once instantiated, without touching the graph.
/// `lookup` gives the sort and size value of each variable's class.
pub fn pattern_sort(
    p: &Pattern,
    lookup: &dyn Fn(&str) -> Option<(Sort, Option<SizeExpr>)>,
) -> Result<(Sort, Option<SizeExpr>), SortError> {
    match p {
        Pattern::Var { name, .. } => Ok(lookup(name).unwrap_or((Sort::Unknown, None))),
        Pattern::Node(op, kids) => {
            let ks = kids.iter().map(|k| pattern_sort(k, lookup)).collect::<Result<Vec<_>, _>>()?;
            let sorts: Vec<Sort> = ks.iter().map(|(s, _)| s.clone()).collect();
            let sizes: Vec<Option<SizeExpr>> = ks.iter().map(|(_, z)| z.clone()).collect();
            let sort = node_sort(op, &sorts, &sizes)?;
            let size = node_size(op, &sizes);
            Ok((sort, size))
        }
    }
}

/// Sort of a node given its children's sorts and size values.
pub fn node_sort(op: &Op, sorts: &[Sort], sizes: &[Option<SizeExpr>]) -> Result<Sort, SortError> {
    match op {
        Op::Var(_) | Op::Input(_) => Ok(Sort::Unknown),
        Op::SizeLit(_) | Op::SizeParam(_) => Ok(Sort::Size),
        Op::NumLit(_) => Ok(Sort::Float),
        Op::Lambda => Ok(Sort::Fn(Box::new(Sort::Unknown), Box::new(sorts[0].clone()))),
        Op::App => sort_app(&sorts[0]),
        Op::Build => sort_build(sizes[0].as_ref(), &sorts[0], &sorts[1]),
        Op::Index => sort_index(&sorts[0], &sorts[1]),
        Op::IFold => sort_ifold(&sorts[0], &sorts[1], &sorts[2]),
        Op::Tuple => Ok(Sort::Tuple(Box::new(sorts[0].clone()), Box::new(sorts[1].clone()))),
        Op::Fst => sort_fst(&sorts[0]),
        Op::Snd => sort_snd(&sorts[0]),
        Op::Call(f) => library_sort(f, sorts, sizes),
    }
}

/// Size value of a node given its children's size values.
pub fn node_size(op: &Op, sizes: &[Option<SizeExpr>]) -> Option<SizeExpr> {
    match op {
        Op::SizeLit(n) => Some(SizeExpr::lit(*n)),
        Op::SizeParam(p) => Some(SizeExpr::param(p.clone())),
        Op::Call(Func::Add) if sizes.len() == 2 => Some(sizes[0].as_ref()?.plus(sizes[1].as_ref()?)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let text = "(build ?N (lam (call + (idx ?A^1 %0) (idx ?B^1 %0))))";
        let p = Pattern::parse(text).unwrap();
        assert_eq!(p.to_string(), text);
        assert_eq!(p.vars(), vec![(sym("N"), 0), (sym("A"), 1), (sym("B"), 1)]);
        let infix = Pattern::parse("(+ ?x 0)").unwrap();
        assert_eq!(infix.to_string(), "(call + ?x 0)");
    }

    #[test]
    fn vadd_pattern_matches_kernel_body() {
        let mut g = EGraph::new();
        let body = crate::ir::parse_expr("(build N (lam (+ (idx $A %0) (idx $B %0))))").unwrap();
        let root = g.add_expr(&body);
        g.rebuild().unwrap();
        let ex = SizeExtractor::new(&g);
        let p = Pattern::parse("(build ?N (lam (+ (idx ?A^1 %0) (idx ?B^1 %0))))").unwrap();
        let ms = match_class(&p, &g, &ex, root);
        assert_eq!(ms.len(), 1);
        let a = g.lookup_expr(&Expr::input("A")).unwrap();
        assert_eq!(ms[0].get("A"), Some((a, 1)));
    }

    #[test]
    fn shifted_var_rejects_captured_class() {
        let mut g = EGraph::new();
        let body = crate::ir::parse_expr("(build N (lam (+ (idx $A %0) %0)))").unwrap();
        let root = g.add_expr(&body);
        g.rebuild().unwrap();
        let ex = SizeExtractor::new(&g);
        let p = Pattern::parse("(build ?N (lam (+ (idx ?A^1 %0) ?B^1)))").unwrap();
        assert!(match_class(&p, &g, &ex, root).is_empty());
    }
}
