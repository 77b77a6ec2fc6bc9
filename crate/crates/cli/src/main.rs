use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amdp_core::harness::{self, HarnessError, RunConfig};
use amdp_core::mdp::MdpFile;
use amdp_core::verify;

#[derive(Parser)]
#[command(name = "amdp", version, about = "Online learning in adversarial tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write per-seed CSVs plus summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `out` directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean regret for several values of T and the log-log slope.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
    },
    /// Run invariant suites against the oracles.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Check an MDP file and list every defect.
    Validate {
        #[arg(long)]
        mdp: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Scaling { config, horizons } => scaling(&config, &horizons),
        Command::Verify { suite } => run_verify(&suite),
        Command::Validate { mdp } => validate(&mdp),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amdp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &Path) -> Result<harness::ResolvedConfig, HarnessError> {
    let resolved = RunConfig::load(path)?.resolve()?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    Ok(resolved)
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let mut resolved = load(config)?;
    if let Some(dir) = out {
        resolved.out = dir;
    }
    let report = harness::run(&resolved);
    harness::write_outputs(&report, &resolved.out)?;
    println!("wrote {}", resolved.out.join("summary.csv").display());
    if let Some(mean) = report.mean_regret() {
        println!(
            "mean regret {mean:.6} over {} seed(s); reference bound {:.6}",
            report.outcomes.len() - report.failures().len(),
            resolved.bound()
        );
    }
    let failures = report.failures();
    if failures.is_empty() {
        return Ok(());
    }
    for (seed, msg) in &failures {
        eprintln!("seed {seed} failed: {msg}");
    }
    Err(HarnessError::Check(format!("{} seed(s) failed", failures.len())))
}

fn scaling(config: &Path, horizons: &[usize]) -> Result<(), HarnessError> {
    let resolved = load(config)?;
    let report = harness::scaling(&resolved, horizons)?;
    print!("{}", report.render());
    let failed: usize = report.rows.iter().map(|r| r.failed_seeds).sum();
    if failed > 0 {
        return Err(HarnessError::Check(format!("{failed} seed run(s) failed")));
    }
    Ok(())
}

fn run_verify(suite: &str) -> Result<(), HarnessError> {
    let rows = verify::run(suite).map_err(|e| HarnessError::Config(e.to_string()))?;
    print!("{}", verify::render(&rows));
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(HarnessError::Check(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn validate(path: &Path) -> Result<(), HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = MdpFile::parse(&text)?;
    let violations = file.validate();
    if violations.is_empty() {
        println!(
            "ok: S={} A={} H={} s1={}",
            file.states, file.actions, file.horizon, file.initial_state
        );
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(HarnessError::Check(format!("{} violation(s) in {}", violations.len(), path.display())))
}
