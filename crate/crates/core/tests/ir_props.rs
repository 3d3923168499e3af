use std::collections::BTreeSet;

use idiomsat::ir::{free_indices, parse_expr, print_expr, shift, substitute, Expr, Func};
use num_rational::Rational64;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..4).prop_map(Expr::Var),
        (0u64..9).prop_map(Expr::SizeLit),
        prop::sample::select(vec!["N", "M"]).prop_map(Expr::size),
        (-20i64..20, 1i64..5).prop_map(|(n, d)| Expr::NumLit(Rational64::new(n, d))),
        prop::sample::select(vec!["a", "xs", "A", "X"]).prop_map(Expr::input),
    ]
}

fn size() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u64..9).prop_map(Expr::SizeLit),
        prop::sample::select(vec!["N", "M"]).prop_map(Expr::size),
        (0u32..4).prop_map(Expr::Var),
    ]
}

fn func() -> impl Strategy<Value = Func> {
    prop::sample::select(vec![
        Func::Add,
        Func::Mul,
        Func::Dot,
        Func::Gemv(true),
        Func::Gemm(false, true),
        Func::TAdd,
        Func::Named("f".into()),
    ])
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 48, 3, |e| {
        prop_oneof![
            e.clone().prop_map(Expr::lam),
            (e.clone(), e.clone()).prop_map(|(a, b)| Expr::app(a, b)),
            (size(), e.clone()).prop_map(|(a, b)| Expr::build(a, b)),
            (e.clone(), e.clone()).prop_map(|(a, b)| Expr::index(a, b)),
            (size(), e.clone(), e.clone()).prop_map(|(a, b, c)| Expr::ifold(a, b, c)),
            (e.clone(), e.clone()).prop_map(|(a, b)| Expr::tuple(a, b)),
            e.clone().prop_map(Expr::fst),
            e.clone().prop_map(Expr::snd),
            (func(), prop::collection::vec(e, 0..4)).prop_map(|(f, args)| Expr::call(f, args)),
        ]
    })
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(e in expr()) {
        let text = print_expr(&e);
        prop_assert_eq!(parse_expr(&text).unwrap(), e, "{}", text);
    }

    #[test]
    fn shift_up_then_down_is_identity(e in expr(), d in 0i64..4, c in 0u32..3) {
        let up = shift(&e, d, c).unwrap();
        prop_assert_eq!(shift(&up, -d, c).unwrap(), e);
    }

    #[test]
    fn shift_moves_free_indices(e in expr(), d in 0u32..4) {
        let want: BTreeSet<u32> = free_indices(&e).into_iter().map(|i| i + d).collect();
        prop_assert_eq!(free_indices(&shift(&e, d as i64, 0).unwrap()), want);
    }

    #[test]
    fn down_shift_fails_only_on_capture(e in expr()) {
        let free = free_indices(&e);
        match shift(&e, -1, 0) {
            Ok(down) => {
                prop_assert!(!free.contains(&0));
                let want: BTreeSet<u32> = free.iter().map(|i| i - 1).collect();
                prop_assert_eq!(free_indices(&down), want);
            }
            Err(_) => prop_assert!(free.contains(&0)),
        }
    }

    #[test]
    fn substituting_into_a_weakened_body_is_identity(e in expr(), r in expr()) {
        prop_assert_eq!(substitute(&shift(&e, 1, 0).unwrap(), &r), e);
    }

    #[test]
    fn substitute_free_indices(b in expr(), r in expr()) {
        let fb = free_indices(&b);
        let mut want: BTreeSet<u32> = fb.iter().filter(|i| **i > 0).map(|i| i - 1).collect();
        if fb.contains(&0) {
            want.extend(free_indices(&r));
        }
        prop_assert_eq!(free_indices(&substitute(&b, &r)), want);
    }

    #[test]
    fn substitute_commutes_with_shift(b in expr(), r in expr()) {
        // Moving a redex under one more binder.
        let lhs = shift(&substitute(&b, &r), 1, 0).unwrap();
        let rhs = substitute(&shift(&b, 1, 1).unwrap(), &shift(&r, 1, 0).unwrap());
        prop_assert_eq!(lhs, rhs);
    }
}

#[test]
fn substitute_var_zero_is_replacement() {
    let r = parse_expr("(lam (call + %0 %3))").unwrap();
    assert_eq!(substitute(&Expr::Var(0), &r), r);
    assert_eq!(substitute(&Expr::Var(2), &r), Expr::Var(1));
}
