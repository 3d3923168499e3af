//! Per-step log rows and their CSV / JSON files.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub kernel: String,
    pub target: String,
    pub step: usize,
    pub enodes: usize,
    pub eclasses: usize,
    pub applied: usize,
    pub step_seconds: f64,
    pub best_cost: f64,
    pub library_calls: String,
    pub coverage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn log_path(dir: &Path, kernel: &str, target: &str, format: Format) -> PathBuf {
    dir.join(format!("{kernel}.{target}.{}", format.extension()))
}

pub fn write_log(path: &Path, rows: &[LogRow], format: Format) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => serde_json::to_writer_pretty(file, rows)?,
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => csv::Reader::from_reader(file)
            .deserialize()
            .collect::<Result<Vec<LogRow>, _>>()
            .with_context(|| format!("reading {}", path.display())),
        Some("json") => serde_json::from_reader(file).with_context(|| format!("reading {}", path.display())),
        _ => bail!("{} is not a .csv or .json log", path.display()),
    }
}

/// Every log in `dir`, sorted by file name.
pub fn read_dir(dir: &Path) -> Result<Vec<Vec<LogRow>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading log directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no logs in {}", dir.display());
    }
    paths.iter().map(|p| read_log(p)).collect()
}
