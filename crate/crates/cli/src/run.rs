//! The `run` command: saturate, verify every step, log.

use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{Context, Result};
use idiomsat::codegen::{checksum, compile_and_run, emit_c, harness_inputs, write_program};
use idiomsat::cost::{format_calls, CostModel, Target};
use idiomsat::interp::{equiv_check, eval, Tolerance, Verdict};
use idiomsat::ir::{print_expr, KernelDef};
use idiomsat::kernels::Corpus;
use idiomsat::rewrite::{run, RunLimits, StepPolicy, StopReason};
use idiomsat::rules::catalog;
use num_traits::ToPrimitive;

use crate::log::{log_path, write_log, Format, LogRow};

pub struct RunOptions {
    pub targets: Vec<Target>,
    pub limits: RunLimits,
    pub policy: StepPolicy,
    pub seed: u64,
    pub trials: usize,
    pub emit_c: Option<PathBuf>,
    pub cc: Option<String>,
    pub log_dir: Option<PathBuf>,
    pub format: Format,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok,
    OracleFailure(String),
    Conflict(String),
}

pub struct KernelRun {
    pub kernel: String,
    pub target: Target,
    pub rows: Vec<LogRow>,
    pub stop: StopReason,
    pub solution: String,
    pub outcome: Outcome,
}

impl KernelRun {
    pub fn summary(&self) -> String {
        let last = self.rows.last();
        let calls = last.map_or("", |r| r.library_calls.as_str());
        format!(
            "{} {}: {} steps, stop={}, best=[{}] cost={} coverage={:.3}\n    {}",
            self.kernel,
            self.target.name(),
            last.map_or(0, |r| r.step),
            self.stop.name(),
            calls,
            last.map_or(0.0, |r| r.best_cost),
            last.map_or(0.0, |r| r.coverage),
            self.solution
        )
    }
}

/// C checksum check at the kernel's test sizes.
fn check_c(
    k: &KernelDef,
    target: Target,
    step: usize,
    expr: &idiomsat::ir::Expr,
    opts: &RunOptions,
) -> Result<Option<String>> {
    let Some(root) = &opts.emit_c else { return Ok(None) };
    let sizes = k.test_sizes();
    let src = emit_c(k, expr, &sizes, opts.seed)?;
    let path = write_program(root, k.name.as_ref(), target.name(), step, &src)?;
    let Some(cc) = &opts.cc else { return Ok(None) };
    let got = compile_and_run(&path, cc)?;
    let want = checksum(&eval(expr, &harness_inputs(k, &sizes, opts.seed)?, &sizes)?);
    let ok = (got - want).abs() <= 1e-6 * want.abs().max(got.abs()) || (got - want).abs() <= 1e-12;
    Ok((!ok).then(|| format!("step {step}: C checksum {got} vs interpreter {want} ({})", path.display())))
}

pub fn run_kernel(k: &KernelDef, target: Target, opts: &RunOptions) -> Result<KernelRun> {
    let model = CostModel::new(target, k.default_sizes());
    let trace = run(k, &catalog(target), &model, &opts.limits, &opts.policy)
        .with_context(|| format!("saturating {} for {}", k.name, target.name()))?;
    let mut rows = Vec::new();
    let mut outcome = Outcome::Ok;
    let mut solution = print_expr(&k.body);
    for s in &trace.steps {
        let verdict = equiv_check(&k.body, &s.best.expr, k, opts.trials, opts.seed, Tolerance::default());
        if let Verdict::Fail { trial, reason } = verdict {
            outcome = Outcome::OracleFailure(format!(
                "step {}: trial {trial}: {reason}\n    {}",
                s.step,
                print_expr(&s.best.expr)
            ));
            break;
        }
        if let Some(msg) = check_c(k, target, s.step, &s.best.expr, opts)? {
            outcome = Outcome::OracleFailure(msg);
            break;
        }
        solution = print_expr(&s.best.expr);
        rows.push(LogRow {
            kernel: k.name.to_string(),
            target: target.name().to_string(),
            step: s.step,
            enodes: s.enodes,
            eclasses: s.eclasses,
            applied: s.applied,
            step_seconds: s.step_seconds,
            best_cost: s.best.cost.to_f64().unwrap_or(f64::INFINITY),
            library_calls: format_calls(&s.best.library_calls),
            coverage: s.best.coverage,
        });
    }
    if outcome == Outcome::Ok && trace.stop_reason == StopReason::Conflict {
        outcome = Outcome::Conflict(format!("{:?}", trace.conflict));
    }
    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir)?;
        write_log(&log_path(dir, k.name.as_ref(), target.name(), opts.format), &rows, opts.format)?;
    }
    Ok(KernelRun { kernel: k.name.to_string(), target, rows, stop: trace.stop_reason, solution, outcome })
}

/// Runs every kernel for every target, `opts.jobs` at a time. Results come
/// back in input order.
pub fn run_all(corpus: &Corpus, kernels: &[String], opts: &RunOptions) -> Result<Vec<KernelRun>> {
    let defs = kernels.iter().map(|n| corpus.load(n)).collect::<Result<Vec<_>, _>>()?;
    let work: Vec<(usize, Target)> = (0..defs.len()).flat_map(|i| opts.targets.iter().map(move |t| (i, *t))).collect();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<KernelRun>>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..opts.jobs.max(1).min(work.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(&(k, t)) = work.get(i) else { break };
                let r = run_kernel(&defs[k], t, opts);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}
