use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffalloc::runner::{self, RunOptions, Verdict, OUT_ENV};
use diffalloc::scenario::{parse_scenario, CheckKind, Scenario};
use diffalloc::{exit, CliError};

#[derive(Parser)]
#[command(
    name = "diffalloc",
    version,
    about = "Run and verify allocation scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its exports.
    Run {
        scenario: PathBuf,
        /// Output directory (default: $DIFFALLOC_OUT/<name> or out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checks to run instead of those listed in the scenario.
        #[arg(long, value_enum)]
        check: Option<CheckArg>,
        /// Write an SVG cell map.
        #[arg(long)]
        plot: bool,
    },
    /// Re-check a saved allocation export against its scenario.
    Verify {
        export: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    All,
    Balance,
    Palm,
    Equivariance,
}

impl CheckArg {
    fn kinds(self) -> Vec<CheckKind> {
        match self {
            CheckArg::All => vec![CheckKind::Balance, CheckKind::Palm, CheckKind::Equivariance],
            CheckArg::Balance => vec![CheckKind::Balance],
            CheckArg::Palm => vec![CheckKind::Palm],
            CheckArg::Equivariance => vec![CheckKind::Equivariance],
        }
    }
}

fn load(path: &PathBuf) -> Result<(Scenario, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            check,
            plot,
        } => {
            let (s, warnings) = load(&scenario)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let opts = RunOptions {
                out,
                seed,
                checks: check.map(CheckArg::kinds),
                plot,
            };
            let res = runner::run(&s, warnings, &opts)?;
            let mut so = std::io::stdout().lock();
            for c in &res.report.checks {
                let _ = writeln!(so, "{}\t{}\t{}", c.verdict.as_str(), c.name, c.detail);
            }
            let _ = writeln!(
                so,
                "{}: {} pipeline, {} stages, exports in {} (set {OUT_ENV} to change the default)",
                res.report.scenario,
                serde_json::to_string(&res.report.pipeline)
                    .unwrap_or_default()
                    .trim_matches('"'),
                res.report.convergence.stages,
                res.out_dir.display()
            );
            if res.report.status == Verdict::Fail {
                let failed: Vec<&str> = res
                    .report
                    .checks
                    .iter()
                    .filter(|c| c.verdict == Verdict::Fail)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(CliError::ChecksFailed(failed.join(", ")));
            }
            Ok(())
        }
        Command::Verify {
            export,
            scenario,
            seed,
        } => {
            let (s, _) = load(&scenario)?;
            let text = std::fs::read_to_string(&export)
                .map_err(|e| CliError::Io(format!("{}: {e}", export.display())))?;
            let checks = runner::verify(&text, &s, seed)?;
            let mut so = std::io::stdout().lock();
            for c in &checks {
                let _ = writeln!(so, "{}\t{}\t{}", c.verdict.as_str(), c.name, c.detail);
            }
            let failed: Vec<&str> = checks
                .iter()
                .filter(|c| c.verdict == Verdict::Fail)
                .map(|c| c.name.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::ChecksFailed(failed.join(", ")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("{}: {e}", e.label());
            if let Some(h) = e.hint() {
                eprintln!("{h}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
