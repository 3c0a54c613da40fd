use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nmdp_core::checks::{run_checks, CheckOutcome};
use nmdp_core::harness::{self, ExperimentConfig};
use nmdp_core::optimizers::SamplingMode;
use nmdp_core::Error;

#[derive(Parser, Debug)]
#[command(name = "nmdp", version, about = "Tabular solvers for nonlinear MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct RunArgs {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the gradient mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Exact,
    Sampled,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Preset {
    Gridworld,
    Twostate,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the invariant and oracle suite; exit 0 iff every item passes.
    Check {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Single optimization run: writes runlog.csv and occupancy.csv.
    Solve(RunArgs),
    /// Paired VPG-Lagrangian vs HPG comparison.
    Experiment {
        #[arg(value_enum)]
        which: Preset,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Write the CMP built from a config (JSON to stdout without --out).
    DumpEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidCmp(_) | Error::InfeasibleStart(_) | Error::DimensionMismatch { .. } => {
                Failure::Config(e.to_string())
            }
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(args: &RunArgs, fallback: Option<&str>) -> Result<ExperimentConfig, Failure> {
    let mut config = match (&args.config, fallback) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => harness::preset(name)?,
        (None, None) => return Err(Failure::Config("--config is required".into())),
    };
    if let Some(seed) = args.seed {
        config.optimizer.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.optimizer.mode = match mode {
            Mode::Exact => SamplingMode::Exact,
            Mode::Sampled => SamplingMode::Sampled,
        };
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(args: &RunArgs, config: &ExperimentConfig, default_name: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| {
            let name = if config.name.is_empty() { default_name } else { &config.name };
            Path::new("runs").join(name)
        })
}

fn print_checks(results: &[CheckOutcome]) -> bool {
    for r in results {
        println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {} failed", results.len(), failed);
    failed == 0
}

fn run(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Check { filter } => {
            let results = run_checks(filter.as_deref());
            if results.is_empty() {
                return Err(Failure::Config("no check matches the filter".into()));
            }
            Ok(print_checks(&results))
        }
        Command::Solve(args) => {
            let config = load(&args, None)?;
            let outcome = harness::solve(&config)?;
            let dir = out_dir(&args, &config, "solve");
            harness::write_solve(&dir, &outcome)?;
            if let Some(last) = outcome.log.last() {
                log::info!("{} iterations, utility {:.6} bits", last.iter, last.utility_bits);
            }
            println!("{}", dir.display());
            Ok(true)
        }
        Command::Experiment { which, args } => {
            let name = match which {
                Preset::Gridworld => "gridworld_fig2",
                Preset::Twostate => "twostate_fig3",
            };
            let config = load(&args, Some(name))?;
            let pair = harness::run_pair(&config)?;
            let dir = out_dir(&args, &config, name);
            harness::write_pair(&dir, &pair)?;
            for (opt, s) in &pair.summary {
                log::info!("{opt}: utility {:.6} bits, constraints {:?}, feasible {}", s.final_utility_bits, s.final_constraint_bits, s.feasible);
            }
            println!("{}", dir.display());
            Ok(true)
        }
        Command::DumpEnv { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            match out {
                Some(path) => harness::dump_env(&config, &path)?,
                None => {
                    let (cmp, _) = harness::build_cmp(&config.environment)?;
                    let text = serde_json::to_string_pretty(&cmp.to_spec()).map_err(|e| Failure::Run(e.to_string()))?;
                    println!("{text}");
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
