//! Textual form of terms, sorts and kernels (s-expressions).

use num_rational::Rational64;
use thiserror::Error;

use super::{sym, Expr, Func, KernelDef, SizeDecl, SizeExpr, Sort, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unbound variable `{name}`")]
    UnboundVariable { line: usize, col: usize, name: String },
    #[error("sort error: {0}")]
    Sort(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum SExp {
    Atom(String, Pos),
    List(Vec<SExp>, Pos),
}

impl SExp {
    pub fn pos(&self) -> Pos {
        match self {
            SExp::Atom(_, p) | SExp::List(_, p) => *p,
        }
    }
}

pub(crate) fn syntax_err<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::Syntax { line: pos.line, col: pos.col, msg: msg.into() })
}

/// Reads every top-level s-expression in `text`. `;` starts a line comment.
pub(crate) fn read_sexps(text: &str) -> Result<Vec<SExp>, ParseError> {
    let mut stack: Vec<(Vec<SExp>, Pos)> = Vec::new();
    let mut top = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                chars.next();
                col += 1;
                stack.push((Vec::new(), pos));
            }
            ')' => {
                chars.next();
                col += 1;
                let (items, start) = match stack.pop() {
                    Some(x) => x,
                    None => return syntax_err(pos, "unexpected `)`"),
                };
                let node = SExp::List(items, start);
                match stack.last_mut() {
                    Some((items, _)) => items.push(node),
                    None => top.push(node),
                }
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                    col += 1;
                }
                let node = SExp::Atom(atom, pos);
                match stack.last_mut() {
                    Some((items, _)) => items.push(node),
                    None => top.push(node),
                }
            }
        }
    }
    if let Some((_, start)) = stack.pop() {
        return syntax_err(start, "unclosed `(`");
    }
    Ok(top)
}

fn read_one(text: &str) -> Result<SExp, ParseError> {
    let mut all = read_sexps(text)?;
    match all.len() {
        1 => Ok(all.pop().unwrap()),
        0 => syntax_err(Pos { line: 1, col: 1 }, "empty input"),
        _ => syntax_err(all[1].pos(), "trailing input"),
    }
}

pub(crate) fn parse_number(s: &str) -> Option<Rational64> {
    let body = s.strip_prefix('-').unwrap_or(s);
    if !body.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let neg = s.starts_with('-');
    let r = if let Some((n, d)) = body.split_once('/') {
        let n: i64 = n.parse().ok()?;
        let d: i64 = d.parse().ok()?;
        if d == 0 {
            return None;
        }
        Rational64::new(n, d)
    } else if let Some((int, frac)) = body.split_once('.') {
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) || frac.len() > 15 {
            return None;
        }
        let int: i64 = int.parse().ok()?;
        let scale = 10i64.checked_pow(frac.len() as u32)?;
        let frac: i64 = frac.parse().ok()?;
        Rational64::new(int.checked_mul(scale)?.checked_add(frac)?, scale)
    } else {
        Rational64::from_integer(body.parse().ok()?)
    };
    Some(if neg { -r } else { r })
}

pub(crate) fn print_number(r: &Rational64) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    // Finite decimal expansion exists iff the denominator is 2^a 5^b.
    let mut d = *r.denom();
    let mut digits = 0u32;
    while d % 10 == 0 {
        d /= 10;
        digits += 1;
    }
    while d % 2 == 0 || d % 5 == 0 {
        d /= if d % 2 == 0 { 2 } else { 5 };
        digits += 1;
    }
    if d != 1 || digits > 15 {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let scale = 10i64.pow(digits);
    let scaled = (r * Rational64::from_integer(scale)).to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let a = scaled.abs();
    format!("{sign}{}.{:0width$}", a / scale, a % scale, width = digits as usize)
}

/// How free names are resolved while converting to terms.
enum Scope<'a> {
    /// Uppercase names are size parameters, others (and `$name`) inputs;
    /// free `%k` indices are allowed.
    Open,
    /// Names must be declared; no free indices.
    Kernel { params: &'a [Symbol], sizes: &'a [Symbol] },
}

struct Conv<'a> {
    scope: Scope<'a>,
}

impl Conv<'_> {
    fn expr(&self, s: &SExp, depth: u32) -> Result<Expr, ParseError> {
        match s {
            SExp::Atom(a, pos) => self.atom(a, *pos, depth),
            SExp::List(items, pos) => {
                let head = match items.first() {
                    Some(SExp::Atom(h, _)) => h.as_str(),
                    _ => return syntax_err(*pos, "expected a keyword after `(`"),
                };
                let args = &items[1..];
                let want = |n: usize| -> Result<(), ParseError> {
                    if args.len() == n {
                        Ok(())
                    } else {
                        syntax_err(*pos, format!("`{head}` takes {n} operands, got {}", args.len()))
                    }
                };
                let sub = |i: usize| self.expr(&args[i], depth);
                Ok(match head {
                    "lam" => {
                        want(1)?;
                        Expr::lam(self.expr(&args[0], depth + 1)?)
                    }
                    "app" => {
                        want(2)?;
                        Expr::app(sub(0)?, sub(1)?)
                    }
                    "build" => {
                        want(2)?;
                        let n = self.size_position(&args[0], depth)?;
                        Expr::build(n, sub(1)?)
                    }
                    "idx" => {
                        want(2)?;
                        Expr::index(sub(0)?, sub(1)?)
                    }
                    "ifold" => {
                        want(3)?;
                        let n = self.size_position(&args[0], depth)?;
                        Expr::ifold(n, sub(1)?, sub(2)?)
                    }
                    "tuple" => {
                        want(2)?;
                        Expr::tuple(sub(0)?, sub(1)?)
                    }
                    "fst" => {
                        want(1)?;
                        Expr::fst(sub(0)?)
                    }
                    "snd" => {
                        want(1)?;
                        Expr::snd(sub(0)?)
                    }
                    "call" => {
                        let name = match args.first() {
                            Some(SExp::Atom(n, _)) => n,
                            _ => return syntax_err(*pos, "`call` needs a function name"),
                        };
                        let rest = args[1..].iter().map(|a| self.expr(a, depth)).collect::<Result<_, _>>()?;
                        Expr::Call(Func::from_name(name), rest)
                    }
                    "+" | "*" => {
                        want(2)?;
                        Expr::Call(Func::from_name(head), vec![sub(0)?, sub(1)?])
                    }
                    other => return syntax_err(*pos, format!("unknown form `{other}`")),
                })
            }
        }
    }

    fn size_position(&self, s: &SExp, depth: u32) -> Result<Expr, ParseError> {
        let e = self.expr(s, depth)?;
        match e {
            Expr::NumLit(_) | Expr::Lambda(_) | Expr::Tuple(..) | Expr::Build(..) => {
                Err(ParseError::Sort(format!("`{}` in a size position", print_expr(&e))))
            }
            _ => Ok(e),
        }
    }

    fn atom(&self, a: &str, pos: Pos, depth: u32) -> Result<Expr, ParseError> {
        if let Some(k) = a.strip_prefix('%') {
            let k: u32 = match k.parse() {
                Ok(k) => k,
                Err(_) => return syntax_err(pos, format!("bad index `{a}`")),
            };
            if matches!(self.scope, Scope::Kernel { .. }) && k >= depth {
                return Err(ParseError::UnboundVariable { line: pos.line, col: pos.col, name: a.into() });
            }
            return Ok(Expr::Var(k));
        }
        if let Some(k) = a.strip_prefix('#') {
            return match k.parse() {
                Ok(k) => Ok(Expr::SizeLit(k)),
                Err(_) => syntax_err(pos, format!("bad size literal `{a}`")),
            };
        }
        if let Some(r) = parse_number(a) {
            return Ok(Expr::NumLit(r));
        }
        let explicit_input = a.strip_prefix('$');
        let name = explicit_input.unwrap_or(a);
        if !is_ident(name) {
            return syntax_err(pos, format!("bad token `{a}`"));
        }
        match &self.scope {
            Scope::Open => {
                if explicit_input.is_none() && name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    Ok(Expr::SizeParam(sym(name)))
                } else {
                    Ok(Expr::Input(sym(name)))
                }
            }
            Scope::Kernel { params, sizes } => {
                if params.iter().any(|p| &**p == name) {
                    Ok(Expr::Input(sym(name)))
                } else if explicit_input.is_none() && sizes.iter().any(|p| &**p == name) {
                    Ok(Expr::SizeParam(sym(name)))
                } else {
                    Err(ParseError::UnboundVariable { line: pos.line, col: pos.col, name: a.into() })
                }
            }
        }
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Parses a standalone term. Uppercase identifiers are size parameters,
/// other identifiers (and any `$name`) are inputs, and free indices are
/// permitted.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    Conv { scope: Scope::Open }.expr(&read_one(text)?, 0)
}

/// Parses a term that must be closed under the given inputs and sizes.
pub fn parse_expr_in(text: &str, params: &[Symbol], sizes: &[Symbol]) -> Result<Expr, ParseError> {
    Conv { scope: Scope::Kernel { params, sizes } }.expr(&read_one(text)?, 0)
}

pub fn parse_sort(text: &str) -> Result<Sort, ParseError> {
    sort_of(&read_one(text)?)
}

pub(crate) fn sort_of(s: &SExp) -> Result<Sort, ParseError> {
    match s {
        SExp::Atom(a, pos) => match a.as_str() {
            "f64" => Ok(Sort::Float),
            "size" => Ok(Sort::Size),
            "?" => Ok(Sort::Unknown),
            _ => syntax_err(*pos, format!("unknown sort `{a}`")),
        },
        SExp::List(items, pos) => {
            let head = match items.first() {
                Some(SExp::Atom(h, _)) => h.as_str(),
                _ => return syntax_err(*pos, "expected a sort constructor"),
            };
            if items.len() != 3 {
                return syntax_err(*pos, format!("`{head}` takes 2 operands"));
            }
            match head {
                "arr" => Ok(Sort::array(sort_of(&items[1])?, dim_of(&items[2])?)),
                "tup" => Ok(Sort::Tuple(Box::new(sort_of(&items[1])?), Box::new(sort_of(&items[2])?))),
                "fn" => Ok(Sort::Fn(Box::new(sort_of(&items[1])?), Box::new(sort_of(&items[2])?))),
                _ => syntax_err(*pos, format!("unknown sort constructor `{head}`")),
            }
        }
    }
}

fn dim_of(s: &SExp) -> Result<SizeExpr, ParseError> {
    let e = Conv { scope: Scope::Open }.expr(s, 0)?;
    SizeExpr::of_expr(&e).map_or_else(|| syntax_err(s.pos(), "bad dimension"), Ok)
}

/// Parses `(kernel NAME (params (p SORT)*) (sizes (S default [test])*) BODY)`.
/// The optional third size entry is the size used for execution; it
/// defaults to `min(default, 8)`.
pub fn parse_kernel(text: &str) -> Result<KernelDef, ParseError> {
    let top = read_one(text)?;
    let (items, pos) = match &top {
        SExp::List(items, pos) => (items, *pos),
        SExp::Atom(_, pos) => return syntax_err(*pos, "expected `(kernel ...)`"),
    };
    let atom = |s: &SExp| match s {
        SExp::Atom(a, _) => Ok(a.clone()),
        SExp::List(_, p) => syntax_err(*p, "expected a name"),
    };
    if items.len() != 5 || !matches!(&items[0], SExp::Atom(k, _) if k == "kernel") {
        return syntax_err(pos, "expected `(kernel NAME (params ...) (sizes ...) BODY)`");
    }
    let name = atom(&items[1])?;
    let section = |s: &SExp, kw: &str| -> Result<Vec<Vec<SExp>>, ParseError> {
        match s {
            SExp::List(xs, _) if matches!(xs.first(), Some(SExp::Atom(k, _)) if k == kw) => xs[1..]
                .iter()
                .map(|x| match x {
                    SExp::List(ys, _) => Ok(ys.clone()),
                    SExp::Atom(_, p) => syntax_err(*p, format!("bad `{kw}` entry")),
                })
                .collect::<Result<Vec<_>, _>>(),
            _ => syntax_err(s.pos(), format!("expected `({kw} ...)`")),
        }
    };
    let mut params = Vec::new();
    for entry in section(&items[2], "params")? {
        if entry.len() != 2 {
            return syntax_err(items[2].pos(), "param entries are `(name SORT)`");
        }
        params.push((sym(&atom(&entry[0])?), sort_of(&entry[1])?));
    }
    let mut sizes = Vec::new();
    for entry in section(&items[3], "sizes")? {
        if entry.len() != 2 && entry.len() != 3 {
            return syntax_err(items[3].pos(), "size entries are `(NAME default [test])`");
        }
        let num = |s: &SExp| -> Result<u64, ParseError> {
            atom(s)?.parse().or_else(|_| syntax_err(s.pos(), "expected a natural number"))
        };
        let default = num(&entry[1])?;
        let test = if entry.len() == 3 { num(&entry[2])? } else { default.min(8) };
        sizes.push(SizeDecl { name: sym(&atom(&entry[0])?), default, test });
    }
    let pnames: Vec<Symbol> = params.iter().map(|(n, _)| n.clone()).collect();
    let snames: Vec<Symbol> = sizes.iter().map(|s| s.name.clone()).collect();
    for (p, s) in &params {
        for d in sort_dims(s) {
            for q in d.params() {
                if !snames.contains(q) {
                    return Err(ParseError::Sort(format!("param `{p}` uses undeclared size `{q}`")));
                }
            }
        }
    }
    let body = Conv { scope: Scope::Kernel { params: &pnames, sizes: &snames } }.expr(&items[4], 0)?;
    let k = KernelDef { name: sym(&name), params, sizes, body };
    k.result_sort().map_err(|e| ParseError::Sort(e.to_string()))?;
    Ok(k)
}

fn sort_dims(s: &Sort) -> Vec<SizeExpr> {
    match s {
        Sort::Array(e, n) => {
            let mut v = vec![n.clone()];
            v.extend(sort_dims(e));
            v
        }
        Sort::Tuple(a, b) | Sort::Fn(a, b) => {
            let mut v = sort_dims(a);
            v.extend(sort_dims(b));
            v
        }
        _ => Vec::new(),
    }
}

/// Canonical single-line form of a term.
pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    print_into(e, &mut out, None);
    out
}

fn print_input(name: &str, kernel_names: Option<&[Symbol]>, out: &mut String) {
    let bare = match kernel_names {
        Some(_) => true,
        None => !name.starts_with(|c: char| c.is_ascii_uppercase()),
    };
    if !bare {
        out.push('$');
    }
    out.push_str(name);
}

fn print_into(e: &Expr, out: &mut String, kernel: Option<&[Symbol]>) {
    let list = |head: &str, kids: &[&Expr], out: &mut String| {
        out.push('(');
        out.push_str(head);
        for k in kids {
            out.push(' ');
            print_into(k, out, kernel);
        }
        out.push(')');
    };
    match e {
        Expr::Lambda(b) => list("lam", &[b], out),
        Expr::App(a, b) => list("app", &[a, b], out),
        Expr::Var(i) => out.push_str(&format!("%{i}")),
        Expr::Build(a, b) => list("build", &[a, b], out),
        Expr::Index(a, b) => list("idx", &[a, b], out),
        Expr::IFold(a, b, c) => list("ifold", &[a, b, c], out),
        Expr::Tuple(a, b) => list("tuple", &[a, b], out),
        Expr::Fst(a) => list("fst", &[a], out),
        Expr::Snd(a) => list("snd", &[a], out),
        Expr::Call(f, args) => {
            let head = format!("call {}", f.name());
            let kids: Vec<&Expr> = args.iter().collect();
            list(&head, &kids, out)
        }
        Expr::SizeLit(n) => out.push_str(&format!("#{n}")),
        Expr::SizeParam(p) => out.push_str(p),
        Expr::NumLit(r) => out.push_str(&print_number(r)),
        Expr::Input(n) => print_input(n, kernel, out),
    }
}

pub fn print_sort(s: &Sort) -> String {
    match s {
        Sort::Float => "f64".into(),
        Sort::Size => "size".into(),
        Sort::Unknown => "?".into(),
        Sort::Array(e, n) => format!("(arr {} {})", print_sort(e), n),
        Sort::Tuple(a, b) => format!("(tup {} {})", print_sort(a), print_sort(b)),
        Sort::Fn(a, b) => format!("(fn {} {})", print_sort(a), print_sort(b)),
    }
}

/// Canonical multi-line kernel file text (with trailing newline).
pub fn print_kernel(k: &KernelDef) -> String {
    let params: Vec<String> = k.params.iter().map(|(n, s)| format!("({n} {})", print_sort(s))).collect();
    let sizes: Vec<String> = k.sizes.iter().map(|s| format!("({} {} {})", s.name, s.default, s.test)).collect();
    let names: Vec<Symbol> = k.params.iter().map(|(n, _)| n.clone()).collect();
    let mut body = String::new();
    print_into(&k.body, &mut body, Some(&names));
    format!("(kernel {}\n  (params {})\n  (sizes {})\n  {})\n", k.name, params.join(" "), sizes.join(" "), body)
}
