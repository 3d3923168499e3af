//! Batch driver for equality-saturation idiom recognition.

mod log;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use idiomsat::cost::Target;
use idiomsat::kernels::Corpus;
use idiomsat::rewrite::{RunLimits, StepPolicy};
use idiomsat::rules;

use crate::log::Format;
use crate::run::{run_all, Outcome, RunOptions};

const EXIT_ORACLE: u8 = 2;
const EXIT_CONFLICT: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "idiomsat", version, about = "Rewrite array kernels into library calls by equality saturation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Saturate kernels and log the best solution after every step.
    Run(RunArgs),
    /// Summarize a directory of run logs.
    Report {
        #[arg(long, default_value = "logs")]
        log_dir: PathBuf,
        /// Write summary.csv and coverage.csv here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the rewrite rules.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Print the rules of a target, one per line.
    List {
        #[arg(long, value_parser = parse_target)]
        target: Target,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Kernel names, or `all` for the whole corpus.
    #[arg(required = true)]
    kernels: Vec<String>,
    /// Comma-separated targets.
    #[arg(long, value_parser = parse_target, value_delimiter = ',', required = true)]
    target: Vec<Target>,
    #[arg(long, default_value_t = RunLimits::default().max_steps)]
    max_steps: usize,
    #[arg(long, default_value_t = RunLimits::default().timeout.as_secs())]
    timeout_secs: u64,
    #[arg(long, default_value_t = RunLimits::default().max_enodes)]
    max_enodes: usize,
    /// Candidates tried per unbound right-hand-side variable.
    #[arg(long, default_value_t = StepPolicy::default().unbound_cap)]
    unbound_cap: usize,
    /// Intro rules stop firing on classes created this many intro steps deep.
    #[arg(long, default_value_t = StepPolicy::default().intro_depth_limit)]
    intro_depth: u32,
    /// Seed for oracle inputs and the C harness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random inputs per oracle check.
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Write C for every step under this directory.
    #[arg(long)]
    emit_c: Option<PathBuf>,
    /// Compile emitted C with this compiler and compare checksums.
    #[arg(long, requires = "emit_c")]
    cc: Option<String>,
    #[arg(long)]
    log_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory of `.kernel` files.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn parse_target(s: &str) -> Result<Target, String> {
    Target::from_name(s).ok_or_else(|| format!("unknown target `{s}` (expected pure-c, blas or pytorch)"))
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let corpus = a.corpus.map(Corpus::open).unwrap_or_default();
    let kernels = if a.kernels.iter().any(|k| k == "all") { corpus.names()? } else { a.kernels };
    let opts = RunOptions {
        targets: a.target,
        limits: RunLimits {
            max_steps: a.max_steps,
            timeout: Duration::from_secs(a.timeout_secs),
            max_enodes: a.max_enodes,
        },
        policy: StepPolicy { unbound_cap: a.unbound_cap, intro_depth_limit: a.intro_depth },
        seed: a.seed,
        trials: a.trials,
        emit_c: a.emit_c,
        cc: a.cc,
        log_dir: a.log_dir,
        format: a.format,
        jobs: a.jobs,
    };
    let mut code = ExitCode::SUCCESS;
    for r in run_all(&corpus, &kernels, &opts)? {
        println!("{}", r.summary());
        match &r.outcome {
            Outcome::Ok => {}
            Outcome::OracleFailure(msg) => {
                eprintln!("{} {}: oracle failure at {msg}", r.kernel, r.target.name());
                code = ExitCode::from(EXIT_ORACLE);
            }
            Outcome::Conflict(msg) => {
                eprintln!("{} {}: constant conflict {msg}", r.kernel, r.target.name());
                if code == ExitCode::SUCCESS {
                    code = ExitCode::from(EXIT_CONFLICT);
                }
            }
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Report { log_dir, out } => report::report(&log_dir, out.as_deref()).map(|()| ExitCode::SUCCESS),
        Command::Rules { command: RulesCommand::List { target } } => {
            print!("{}", rules::dump(target));
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<idiomsat::kernels::KernelError>()
                .is_some_and(|k| matches!(k, idiomsat::kernels::KernelError::UnknownKernel(_)))
            {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
