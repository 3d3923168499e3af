use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_rational::Ratio;

use crate::cost::{count_library_calls, static_coverage, CostModel};
use crate::egraph::{ConstConflict, EGraph, Id};
use crate::extract::{ExtractError, Extractor};
use crate::ir::{Expr, KernelDef, Sort, Symbol};

use super::{saturation_step, RewriteRule, StepPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Fixpoint,
    StepLimit,
    TimeLimit,
    NodeLimit,
    Conflict,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Fixpoint => "fixpoint",
            StopReason::StepLimit => "step_limit",
            StopReason::TimeLimit => "time_limit",
            StopReason::NodeLimit => "node_limit",
            StopReason::Conflict => "conflict",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunLimits {
    pub max_steps: usize,
    pub timeout: Duration,
    pub max_enodes: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_steps: 10, timeout: Duration::from_secs(300), max_enodes: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSolution {
    pub expr: Expr,
    pub cost: Ratio<i128>,
    pub library_calls: BTreeMap<String, usize>,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub enodes: usize,
    pub eclasses: usize,
    pub applied: usize,
    pub step_seconds: f64,
    pub best: BestSolution,
}

#[derive(Clone, Debug)]
pub struct SaturationTrace {
    pub steps: Vec<StepRecord>,
    pub stop_reason: StopReason,
    pub conflict: Option<ConstConflict>,
}

impl SaturationTrace {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("step 0 is always recorded")
    }

    pub fn final_best(&self) -> &BestSolution {
        &self.last().best
    }
}

fn best(
    g: &EGraph,
    root: Id,
    model: &CostModel,
    inputs: &BTreeMap<Symbol, Sort>,
) -> Result<BestSolution, ExtractError> {
    let (expr, cost) = Extractor::<Ratio<i128>>::new(g, model).extract(root)?;
    let library_calls = count_library_calls(&expr);
    let coverage = static_coverage(&expr, model, inputs);
    Ok(BestSolution { expr, cost, library_calls, coverage })
}

/// Saturates `kernel`'s body with `rules`, extracting the cheapest solution
/// under `model` after every step. Step 0 records the input itself.
pub fn run(
    kernel: &KernelDef,
    rules: &[RewriteRule],
    model: &CostModel,
    limits: &RunLimits,
    policy: &StepPolicy,
) -> Result<SaturationTrace, ExtractError> {
    let inputs = kernel.input_sorts();
    let mut g = EGraph::with_inputs(inputs.clone());
    let root = g.add_root(&kernel.body);
    g.rebuild().expect("a fresh term cannot conflict");
    let mut steps = vec![StepRecord {
        step: 0,
        enodes: g.node_count(),
        eclasses: g.class_count(),
        applied: 0,
        step_seconds: 0.0,
        best: best(&g, root, model, &inputs)?,
    }];
    let started = Instant::now();
    let stop = |reason, steps, conflict| Ok(SaturationTrace { steps, stop_reason: reason, conflict });
    loop {
        let done = steps.len() - 1;
        if done >= limits.max_steps {
            return stop(StopReason::StepLimit, steps, None);
        }
        if started.elapsed() >= limits.timeout {
            return stop(StopReason::TimeLimit, steps, None);
        }
        if steps.last().unwrap().enodes >= limits.max_enodes {
            return stop(StopReason::NodeLimit, steps, None);
        }
        let t = Instant::now();
        let report = match saturation_step(&mut g, rules, policy) {
            Ok(r) => r,
            Err(c) => return stop(StopReason::Conflict, steps, Some(c)),
        };
        let mut b = best(&g, root, model, &inputs)?;
        let prev = &steps.last().unwrap().best;
        if prev.cost < b.cost {
            b = prev.clone();
        }
        steps.push(StepRecord {
            step: done + 1,
            enodes: report.enodes,
            eclasses: report.eclasses,
            applied: report.applied,
            step_seconds: t.elapsed().as_secs_f64(),
            best: b,
        });
        if report.applied == 0 {
            return stop(StopReason::Fixpoint, steps, None);
        }
    }
}
