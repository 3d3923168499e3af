//! The compiled-in rule catalog.

use crate::cost::Target;
use crate::rewrite::{ApplierKind, Family, RewriteRule, SortFilter, Source};

fn rule(name: &str, family: Family, lhs: &str, rhs: &str) -> RewriteRule {
    RewriteRule::new(name, family, lhs, rhs)
}

/// The eight rules relating build, indexing, tuples and lambdas.
pub fn core() -> Vec<RewriteRule> {
    use Family::Core;
    vec![
        rule("R-BetaReduce", Core, "(app (lam ?e) ?y)", "?e").applier(ApplierKind::BetaSubst { body: "e", arg: "y" }),
        rule("R-IntroLambda", Core, "?e", "(app (lam ?e^1) ?y)")
            .applier(ApplierKind::IntroLambda)
            .sort_of("e", SortFilter::Value)
            .closed("e")
            .unbound("y", Source::IndexVars)
            .intro(),
        rule("R-ElimIndexBuild", Core, "(idx (build ?N ?f) ?i)", "(app ?f ?i)"),
        rule("R-IntroIndexBuild", Core, "(app ?f ?i)", "(idx (build ?N ?f) ?i)")
            .unbound("N", Source::ExtentOf(crate::ir::sym("i")))
            .intro(),
        rule("R-ElimFstTuple", Core, "(fst (tuple ?a ?b))", "?a"),
        rule("R-IntroFstTuple", Core, "?a", "(fst (tuple ?a ?b))")
            .sort_of("a", SortFilter::Value)
            .unbound("b", Source::Classes(SortFilter::Value))
            .intro(),
        rule("R-ElimSndTuple", Core, "(snd (tuple ?a ?b))", "?b"),
        rule("R-IntroSndTuple", Core, "?b", "(snd (tuple ?a ?b))")
            .sort_of("b", SortFilter::Value)
            .unbound("a", Source::Classes(SortFilter::Value))
            .intro(),
    ]
}

/// Both directions of the four scalar identities. Expanding directions only
/// fire on scalar classes.
pub fn scalar() -> Vec<RewriteRule> {
    use Family::Scalar;
    vec![
        rule("E-AddZero", Scalar, "(+ ?x 0)", "?x"),
        rule("E-AddZero-rev", Scalar, "?x", "(+ ?x 0)").sort_of("x", SortFilter::Float).intro(),
        rule("E-MulOneL", Scalar, "(* 1 ?x)", "?x"),
        rule("E-MulOneL-rev", Scalar, "?x", "(* 1 ?x)").sort_of("x", SortFilter::Float).intro(),
        rule("E-MulOneR", Scalar, "(* ?x 1)", "?x"),
        rule("E-MulOneR-rev", Scalar, "?x", "(* ?x 1)").sort_of("x", SortFilter::Float).intro(),
        rule("E-CommuteMul", Scalar, "(* ?x ?y)", "(* ?y ?x)"),
        rule("E-CommuteMul-rev", Scalar, "(* ?y ?x)", "(* ?x ?y)"),
    ]
}

const DOT_LHS: &str = "(ifold ?N 0 (lam (lam (+ (* (idx ?A^2 %1) (idx ?B^2 %1)) %0))))";
const TRANSPOSE_LHS: &str = "(build ?N (lam (build ?M (lam (idx (idx ?A^2 %0) %1)))))";

fn flag(b: bool) -> char {
    if b {
        'T'
    } else {
        'F'
    }
}

pub fn blas() -> Vec<RewriteRule> {
    use Family::Blas;
    let mut out = vec![
        rule("I-Axpy", Blas, "(build ?N (lam (+ (* ?a^1 (idx ?A^1 %0)) (idx ?B^1 %0))))", "(call axpy ?a ?A ?B)"),
        rule("I-Dot", Blas, DOT_LHS, "(call dot ?A ?B)").outer_dim("A", "N"),
        rule(
            "I-Gemv",
            Blas,
            "(build ?N (lam (+ (* ?a^1 (call dot (idx ?A^1 %0) ?B^1)) (* ?b^1 (idx ?C^1 %0)))))",
            "(call gemv_F ?a ?A ?B ?b ?C)",
        ),
        rule(
            "I-Gemm",
            Blas,
            "(build ?N (lam (call gemv_F ?a^1 ?B^1 (idx ?A^1 %0) ?b^1 (idx ?C^1 %0))))",
            "(call gemm_FT ?a ?A ?B ?b ?C)",
        ),
        rule("I-Transpose", Blas, TRANSPOSE_LHS, "(call transpose ?A)"),
    ];
    for x in [false, true] {
        let (from, to) = (format!("gemv_{}", flag(x)), format!("gemv_{}", flag(!x)));
        out.push(rule(
            "I-TransposeInGemv",
            Blas,
            &format!("(call {from} ?a (call transpose ?A) ?B ?b ?C)"),
            &format!("(call {to} ?a ?A ?B ?b ?C)"),
        ));
        out.push(
            rule(
                "I-TransposeInGemv-rev",
                Blas,
                &format!("(call {to} ?a ?A ?B ?b ?C)"),
                &format!("(call {from} ?a (call transpose ?A) ?B ?b ?C)"),
            )
            .no_transpose("A")
            .intro(),
        );
    }
    for x in [false, true] {
        for y in [false, true] {
            let name = |a: bool, b: bool| format!("gemm_{}{}", flag(a), flag(b));
            let (from, to_a, to_b) = (name(x, y), name(!x, y), name(x, !y));
            out.push(rule(
                "I-TransposeAInGemm",
                Blas,
                &format!("(call {from} ?a (call transpose ?A) ?B ?b ?C)"),
                &format!("(call {to_a} ?a ?A ?B ?b ?C)"),
            ));
            out.push(
                rule(
                    "I-TransposeAInGemm-rev",
                    Blas,
                    &format!("(call {to_a} ?a ?A ?B ?b ?C)"),
                    &format!("(call {from} ?a (call transpose ?A) ?B ?b ?C)"),
                )
                .no_transpose("A")
                .intro(),
            );
            out.push(rule(
                "I-TransposeBInGemm",
                Blas,
                &format!("(call {from} ?a ?A (call transpose ?B) ?b ?C)"),
                &format!("(call {to_b} ?a ?A ?B ?b ?C)"),
            ));
            out.push(
                rule(
                    "I-TransposeBInGemm-rev",
                    Blas,
                    &format!("(call {to_b} ?a ?A ?B ?b ?C)"),
                    &format!("(call {from} ?a ?A (call transpose ?B) ?b ?C)"),
                )
                .no_transpose("B")
                .intro(),
            );
        }
    }
    out.push(rule(
        "I-HoistMulFromDot",
        Blas,
        "(call dot (build ?N (lam (* ?a^1 (idx ?A^1 %0)))) ?B)",
        "(* ?a (call dot ?A ?B))",
    ));
    out.push(
        rule(
            "I-HoistMulFromDot-rev",
            Blas,
            "(* ?a (call dot ?A ?B))",
            "(call dot (build ?N (lam (* ?a^1 (idx ?A^1 %0)))) ?B)",
        )
        .sort_of("a", SortFilter::Float)
        .unbound("N", Source::OuterDimOf(crate::ir::sym("A")))
        .intro(),
    );
    out.push(rule("I-MemsetZero", Blas, "(build ?N (lam 0))", "(call memset 0 ?N)"));
    out
}

pub fn pytorch() -> Vec<RewriteRule> {
    use Family::Pytorch;
    vec![
        rule("I-Dot", Pytorch, DOT_LHS, "(call dot ?A ?B)").outer_dim("A", "N"),
        rule("I-VecSum", Pytorch, "(ifold ?N 0 (lam (lam (+ (idx ?A^2 %1) %0))))", "(call sum ?A)")
            .sort_of("A", SortFilter::Vector)
            .outer_dim("A", "N"),
        rule("I-MatVec", Pytorch, "(build ?N (lam (call dot (idx ?A^1 %0) ?B^1)))", "(call mv ?A ?B)"),
        rule("I-MatMat", Pytorch, "(build ?N (lam (call mv ?B^1 (idx ?A^1 %0))))", "(call mm ?A (call transpose ?B))"),
        rule("I-Transpose", Pytorch, TRANSPOSE_LHS, "(call transpose ?A)"),
        rule("I-TransposeTwice", Pytorch, "(call transpose (call transpose ?A))", "?A"),
        rule("I-TransposeTwice-rev", Pytorch, "?A", "(call transpose (call transpose ?A))")
            .sort_of("A", SortFilter::Matrix)
            .no_transpose("A")
            .intro(),
        rule("I-AddVec", Pytorch, "(build ?N (lam (+ (idx ?A^1 %0) (idx ?B^1 %0))))", "(call add ?A ?B)"),
        rule("I-LiftAdd", Pytorch, "(build ?N (lam (call add (idx ?A^1 %0) (idx ?B^1 %0))))", "(call add ?A ?B)")
            .outer_dim("A", "N")
            .outer_dim("B", "N"),
        rule("I-LiftAdd-rev", Pytorch, "(call add ?A ?B)", "(build ?N (lam (call add (idx ?A^1 %0) (idx ?B^1 %0))))")
            .unbound("N", Source::OuterDimOf(crate::ir::sym("A")))
            .intro(),
        rule("I-MulScalarAndVec", Pytorch, "(build ?N (lam (* ?a^1 (idx ?A^1 %0))))", "(call mul ?a ?A)")
            .sort_of("a", SortFilter::Float),
        rule("I-LiftMul", Pytorch, "(build ?N (lam (call mul ?a^1 (idx ?A^1 %0))))", "(call mul ?a ?A)")
            .outer_dim("A", "N"),
        rule("I-LiftMul-rev", Pytorch, "(call mul ?a ?A)", "(build ?N (lam (call mul ?a^1 (idx ?A^1 %0))))")
            .unbound("N", Source::OuterDimOf(crate::ir::sym("A")))
            .intro(),
        rule("I-FullVec", Pytorch, "(build ?N (lam ?c^1))", "(call full ?c ?N)").sort_of("c", SortFilter::Float),
    ]
}

/// Rules installed for `target`, in a fixed order.
pub fn catalog(target: Target) -> Vec<RewriteRule> {
    let mut out = core();
    out.extend(scalar());
    match target {
        Target::PureC => {}
        Target::Blas => out.extend(blas()),
        Target::Pytorch => out.extend(pytorch()),
    }
    out
}

/// One line per rule: name, family, left- and right-hand side.
pub fn dump(target: Target) -> String {
    catalog(target).iter().map(|r| format!("{r}\n")).collect()
}
