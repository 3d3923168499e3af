use std::path::Path;
use std::process::{Command, Output};

fn idiomsat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idiomsat")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn gemv_blas_ends_in_one_gemv() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let o = idiomsat(&["run", "gemv", "--target", "blas", "--max-steps", "6", "--log-dir", logs.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("best=[1 × gemv]"), "{}", stdout(&o));

    let rows = csv_rows(&logs.join("gemv.blas.csv"));
    let enodes: Vec<usize> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(enodes.windows(2).all(|w| w[0] <= w[1]), "{enodes:?}");

    let out = dir.path().join("report");
    let o = idiomsat(&["report", "--log-dir", logs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary[0][2], "1 × gemv");
    let cov = csv_rows(&out.join("coverage.csv"));
    assert_eq!(cov.last().unwrap()[3], "1.0");
}

#[test]
fn vsum_blas_uses_dot() {
    let o = idiomsat(&["run", "vsum", "--target", "blas"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("(call dot"), "{}", stdout(&o));
}

#[test]
fn zero_steps_is_the_identity() {
    let o = idiomsat(&["run", "memset", "--target", "pure-c", "--max-steps", "0"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("(build N (lam 0))"), "{}", stdout(&o));
}

#[test]
fn logs_are_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let logs = dir.path().join(name);
        let args = [
            "run",
            "axpy",
            "gesummv",
            "--target",
            "blas,pytorch",
            "--max-steps",
            "4",
            "--jobs",
            "2",
            "--format",
            "json",
        ];
        let o = idiomsat(&[&args[..], &["--log-dir", logs.to_str().unwrap()]].concat());
        assert!(o.status.success(), "{o:?}");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(logs.join("gesummv.pytorch.json")).unwrap()).unwrap();
        for row in v.as_array_mut().unwrap() {
            row.as_object_mut().unwrap().remove("step_seconds");
        }
        runs.push(v);
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn emitted_c_compiles_and_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = idiomsat(&[
        "run",
        "axpy",
        "--target",
        "blas",
        "--max-steps",
        "3",
        "--emit-c",
        out.to_str().unwrap(),
        "--cc",
        "cc",
    ]);
    assert!(o.status.success(), "{o:?}");
    for step in 0..=3 {
        assert!(out.join(format!("axpy/blas/step{step}.c")).is_file());
    }
    assert!(out.join("axpy/blas/fallback_blas.h").is_file());
}

#[test]
fn error_exit_codes() {
    assert_eq!(idiomsat(&["run", "nope", "--target", "blas"]).status.code(), Some(4));
    assert_eq!(idiomsat(&["run", "gemv", "--target", "fortran"]).status.code(), Some(4));
    assert_eq!(idiomsat(&["frobnicate"]).status.code(), Some(4));
    let empty = tempfile::tempdir().unwrap();
    let o = idiomsat(&["report", "--log-dir", empty.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn rules_list() {
    let o = idiomsat(&["rules", "list", "--target", "pytorch"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("I-MatMat [pytorch]")), "{text}");
    assert!(!text.contains("[blas]"));
}
