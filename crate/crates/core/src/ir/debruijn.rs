use std::collections::BTreeSet;

use thiserror::Error;

use super::Expr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShiftError {
    #[error("down-shift by {amount} would capture free index %{index}")]
    DownShiftCapture { index: u32, amount: i64 },
    #[error("shifted index out of range")]
    Overflow,
}

/// Adds `amount` to every free index `>= cutoff`. Bound indices (below the
/// cutoff, which grows under each lambda) are left alone.
pub fn shift(e: &Expr, amount: i64, cutoff: u32) -> Result<Expr, ShiftError> {
    if amount == 0 {
        return Ok(e.clone());
    }
    shift_rec(e, amount, cutoff)
}

fn shift_rec(e: &Expr, amount: i64, cutoff: u32) -> Result<Expr, ShiftError> {
    let go = |x: &Expr, c: u32| shift_rec(x, amount, c).map(Box::new);
    Ok(match e {
        Expr::Var(i) if *i >= cutoff => {
            let j = *i as i64 + amount;
            if j < cutoff as i64 {
                return Err(ShiftError::DownShiftCapture { index: *i, amount });
            }
            Expr::Var(u32::try_from(j).map_err(|_| ShiftError::Overflow)?)
        }
        Expr::Lambda(b) => Expr::Lambda(go(b, cutoff + 1)?),
        Expr::App(a, b) => Expr::App(go(a, cutoff)?, go(b, cutoff)?),
        Expr::Build(a, b) => Expr::Build(go(a, cutoff)?, go(b, cutoff)?),
        Expr::Index(a, b) => Expr::Index(go(a, cutoff)?, go(b, cutoff)?),
        Expr::IFold(a, b, c) => Expr::IFold(go(a, cutoff)?, go(b, cutoff)?, go(c, cutoff)?),
        Expr::Tuple(a, b) => Expr::Tuple(go(a, cutoff)?, go(b, cutoff)?),
        Expr::Fst(a) => Expr::Fst(go(a, cutoff)?),
        Expr::Snd(a) => Expr::Snd(go(a, cutoff)?),
        Expr::Call(f, args) => {
            Expr::Call(f.clone(), args.iter().map(|a| shift_rec(a, amount, cutoff)).collect::<Result<_, _>>()?)
        }
        Expr::Var(_) | Expr::SizeLit(_) | Expr::SizeParam(_) | Expr::NumLit(_) | Expr::Input(_) => e.clone(),
    })
}

/// Replaces free index 0 in `body` by `replacement` and lowers every other
/// free index by one. The replacement is shifted as it moves under binders.
pub fn substitute(body: &Expr, replacement: &Expr) -> Expr {
    subst_at(body, replacement, 0)
}

fn subst_at(e: &Expr, r: &Expr, depth: u32) -> Expr {
    let go = |x: &Expr, d: u32| Box::new(subst_at(x, r, d));
    match e {
        Expr::Var(i) => {
            if *i == depth {
                // Up-shifts never fail.
                shift(r, depth as i64, 0).expect("up-shift")
            } else if *i > depth {
                Expr::Var(i - 1)
            } else {
                Expr::Var(*i)
            }
        }
        Expr::Lambda(b) => Expr::Lambda(go(b, depth + 1)),
        Expr::App(a, b) => Expr::App(go(a, depth), go(b, depth)),
        Expr::Build(a, b) => Expr::Build(go(a, depth), go(b, depth)),
        Expr::Index(a, b) => Expr::Index(go(a, depth), go(b, depth)),
        Expr::IFold(a, b, c) => Expr::IFold(go(a, depth), go(b, depth), go(c, depth)),
        Expr::Tuple(a, b) => Expr::Tuple(go(a, depth), go(b, depth)),
        Expr::Fst(a) => Expr::Fst(go(a, depth)),
        Expr::Snd(a) => Expr::Snd(go(a, depth)),
        Expr::Call(f, args) => Expr::Call(f.clone(), args.iter().map(|a| subst_at(a, r, depth)).collect()),
        Expr::SizeLit(_) | Expr::SizeParam(_) | Expr::NumLit(_) | Expr::Input(_) => e.clone(),
    }
}

/// The set of free De Bruijn indices of `e`.
pub fn free_indices(e: &Expr) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    collect_free(e, 0, &mut out);
    out
}

fn collect_free(e: &Expr, depth: u32, out: &mut BTreeSet<u32>) {
    match e {
        Expr::Var(i) if *i >= depth => {
            out.insert(i - depth);
        }
        Expr::Lambda(b) => collect_free(b, depth + 1, out),
        _ => {
            for c in e.children() {
                collect_free(c, depth, out);
            }
        }
    }
}

/// Compact set of small De Bruijn indices (below 128).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FreeSet(u128);

impl FreeSet {
    pub const EMPTY: FreeSet = FreeSet(0);

    pub fn single(i: u32) -> FreeSet {
        if i < 128 {
            FreeSet(1u128 << i)
        } else {
            FreeSet(0)
        }
    }

    pub fn union(self, other: FreeSet) -> FreeSet {
        FreeSet(self.0 | other.0)
    }

    pub fn intersect(self, other: FreeSet) -> FreeSet {
        FreeSet(self.0 & other.0)
    }

    /// The set seen from outside one binder: index 0 is dropped and the
    /// rest are decremented.
    pub fn unbind(self) -> FreeSet {
        FreeSet(self.0 >> 1)
    }

    pub fn contains(self, i: u32) -> bool {
        i < 128 && self.0 & (1u128 << i) != 0
    }

    /// True when none of `0..k` is in the set.
    pub fn avoids_below(self, k: u32) -> bool {
        if k == 0 {
            return true;
        }
        let mask = if k >= 128 { u128::MAX } else { (1u128 << k) - 1 };
        self.0 & mask == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = u32> {
        (0..128u32).filter(move |i| self.contains(*i))
    }
}

impl From<&BTreeSet<u32>> for FreeSet {
    fn from(s: &BTreeSet<u32>) -> Self {
        s.iter().fold(FreeSet::EMPTY, |acc, i| acc.union(FreeSet::single(*i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{sym, Expr};

    fn v(i: u32) -> Expr {
        Expr::Var(i)
    }

    #[test]
    fn shift_free_var() {
        assert_eq!(shift(&v(0), 1, 0).unwrap(), v(1));
    }

    #[test]
    fn shift_leaves_bound_var() {
        let e = Expr::lam(v(0));
        assert_eq!(shift(&e, 1, 0).unwrap(), e);
    }

    #[test]
    fn shift_under_lambda() {
        assert_eq!(shift(&Expr::lam(v(1)), 1, 0).unwrap(), Expr::lam(v(2)));
    }

    #[test]
    fn down_shift_capture() {
        assert!(matches!(shift(&v(0), -1, 0), Err(ShiftError::DownShiftCapture { index: 0, .. })));
        assert_eq!(shift(&v(1), -1, 0).unwrap(), v(0));
    }

    #[test]
    fn substitute_examples() {
        let y = Expr::Input(sym("y"));
        assert_eq!(substitute(&v(0), &y), y);
        assert_eq!(substitute(&v(1), &y), v(0));
        // replacement is shifted under the binder
        assert_eq!(substitute(&Expr::lam(v(1)), &v(0)), Expr::lam(v(1)));
    }

    #[test]
    fn free_index_examples() {
        assert!(free_indices(&Expr::lam(v(0))).is_empty());
        assert_eq!(free_indices(&v(3)), [3].into_iter().collect());
        let e = Expr::build(Expr::size("N"), Expr::lam(Expr::index(v(1), v(0))));
        assert_eq!(free_indices(&e), [0].into_iter().collect());
    }

    #[test]
    fn freeset_ops() {
        let s = FreeSet::single(0).union(FreeSet::single(3));
        assert!(!s.avoids_below(1));
        assert_eq!(s.unbind(), FreeSet::single(2));
        assert!(FreeSet::single(2).avoids_below(2));
    }
}
