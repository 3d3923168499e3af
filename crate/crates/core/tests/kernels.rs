use idiomsat::interp::{eval, random_inputs, Tolerance};
use idiomsat::ir::{print_expr, Expr, Func};
use idiomsat::kernels::{load, reference_eval, NAMES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn calls(e: &Expr, out: &mut Vec<Func>) {
    if let Expr::Call(f, _) = e {
        out.push(f.clone());
    }
    e.children().into_iter().for_each(|c| calls(c, out));
}

#[test]
fn interpreter_agrees_with_reference() {
    let tol = Tolerance::default();
    for name in NAMES {
        let k = load(name).unwrap();
        let sizes = k.test_sizes();
        assert!(sizes.values().all(|n| *n <= 8), "{name}");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let inputs = random_inputs::<f64, _>(&k, &sizes, &mut rng).unwrap();
            let got = eval(&k.body, &inputs, &sizes).unwrap();
            let want = reference_eval(name, &inputs, &sizes).unwrap();
            assert_eq!(tol.compare(&got, &want), None, "{name} trial {trial}");
        }
    }
}

#[test]
fn bodies_have_no_library_calls() {
    for name in NAMES {
        let mut fs = Vec::new();
        calls(&load(name).unwrap().body, &mut fs);
        assert!(fs.iter().all(|f| matches!(f, Func::Add | Func::Mul)), "{name}: {fs:?}");
    }
}

#[test]
fn gemm_reference_on_ten_instances() {
    let k = load("gemm").unwrap();
    let sizes = k.test_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let inputs = random_inputs::<f64, _>(&k, &sizes, &mut rng).unwrap();
        let got = eval(&k.body, &inputs, &sizes).unwrap();
        let want = reference_eval("gemm", &inputs, &sizes).unwrap();
        assert_eq!(Tolerance::default().compare(&got, &want), None);
    }
}

#[test]
fn vsum_and_doitgen_bodies() {
    assert_eq!(print_expr(&load("vsum").unwrap().body), "(ifold N 0 (lam (lam (call + (idx xs %1) %0))))");
    let d = print_expr(&load("doitgen").unwrap().body);
    assert!(d.contains("(idx (idx (idx $A %4) %3) %1)") && d.contains("(idx (idx $B %2) %1)"), "{d}");
}
