//! Command-line driver for strong-convergence experiments.

mod config;
mod presets;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "monosde", version, about = "Monte Carlo strong-error experiments for SDE integrators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset or a JSON config.
    Run(RunArgs),
    /// List the built-in presets.
    Presets,
    /// Print a preset as JSON, ready to edit and pass back via --config.
    Show { name: String },
    /// Print the JSON schema for config files.
    Schema,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of Monte Carlo samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Validate and print the plan without running.
    #[arg(long)]
    dry_run: bool,
    /// Add a wall-clock seconds column to convergence CSVs.
    #[arg(long)]
    timing: bool,
}

const SCHEMA: &str = include_str!("../config.schema.json");

fn load(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => presets::preset(name)
            .ok_or_else(|| format!("unknown preset `{name}`; available: {}", presets::NAMES.join(", ")))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?
        }
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    if let Some(m) = args.samples {
        cfg.samples = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), String> {
    let cfg = load(&args)?;
    let plan = cfg.plan().map_err(|e| e.to_string())?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&run::describe(&plan)).expect("serializable"));
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| format!("cannot start worker pool: {e}"))?;
    let written = pool
        .install(|| run::execute(&cfg, &plan, &args.out, args.timing))
        .map_err(|e| e.to_string())?;
    for file in written {
        println!("{}", args.out.join(file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(())
        }
        Command::Show { name } => presets::preset(&name)
            .map(|cfg| println!("{}", cfg.to_json()))
            .ok_or_else(|| format!("unknown preset `{name}`")),
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
