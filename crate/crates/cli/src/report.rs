//! The `report` command: per-kernel summary and coverage over steps.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;

use crate::log::{read_dir, LogRow};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub kernel: String,
    pub target: String,
    pub solution: String,
    /// First step at which the final solution was found.
    pub steps: usize,
    pub enodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageRow {
    pub kernel: String,
    pub target: String,
    pub step: usize,
    pub coverage: f64,
}

pub fn summarize(log: &[LogRow]) -> Option<SummaryRow> {
    let last = log.last()?;
    let first = log.iter().find(|r| r.best_cost == last.best_cost && r.library_calls == last.library_calls)?;
    Some(SummaryRow {
        kernel: last.kernel.clone(),
        target: last.target.clone(),
        solution: if last.library_calls.is_empty() { "-".into() } else { last.library_calls.clone() },
        steps: first.step,
        enodes: first.enodes,
    })
}

pub fn coverage(log: &[LogRow]) -> Vec<CoverageRow> {
    log.iter()
        .map(|r| CoverageRow { kernel: r.kernel.clone(), target: r.target.clone(), step: r.step, coverage: r.coverage })
        .collect()
}

fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and `coverage.csv` into `out_dir` when given,
/// otherwise prints both tables to stdout.
pub fn report(log_dir: &Path, out_dir: Option<&Path>) -> Result<()> {
    let logs = read_dir(log_dir)?;
    let summary: Vec<SummaryRow> = logs.iter().filter_map(|l| summarize(l)).collect();
    if summary.is_empty() {
        bail!("logs in {} have no rows", log_dir.display());
    }
    let cov: Vec<CoverageRow> = logs.iter().flat_map(|l| coverage(l)).collect();
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_csv(std::fs::File::create(dir.join("summary.csv"))?, &summary)?;
            write_csv(std::fs::File::create(dir.join("coverage.csv"))?, &cov)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_csv(&mut out, &summary)?;
            writeln!(out)?;
            write_csv(&mut out, &cov)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, cost: f64, calls: &str, enodes: usize) -> LogRow {
        LogRow {
            kernel: "gemv".into(),
            target: "blas".into(),
            step,
            enodes,
            eclasses: 1,
            applied: 1,
            step_seconds: 0.0,
            best_cost: cost,
            library_calls: calls.into(),
            coverage: if calls.is_empty() { 0.0 } else { 1.0 },
        }
    }

    #[test]
    fn steps_is_first_step_reaching_the_final_solution() {
        let log = vec![
            row(0, 9.0, "", 30),
            row(1, 5.0, "1 × dot", 300),
            row(2, 2.0, "1 × gemv", 400),
            row(3, 2.0, "1 × gemv", 900),
        ];
        let s = summarize(&log).unwrap();
        assert_eq!((s.steps, s.enodes, s.solution.as_str()), (2, 400, "1 × gemv"));
        assert_eq!(coverage(&log).iter().map(|c| c.coverage).collect::<Vec<_>>(), vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn no_calls_prints_a_dash() {
        assert_eq!(summarize(&[row(0, 1.0, "", 3)]).unwrap().solution, "-");
    }
}
