use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use systemic_risk::config::ExperimentConfig;
use systemic_risk::Error;

mod commands;

#[derive(Parser)]
#[command(name = "srm", version, about = "Systemic shortfall risk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the training and test scenario sets.
    Generate(Common),
    /// Closed-form reference solution (paired exponential utility only).
    Oracle(Common),
    /// Train the allocation network.
    Primal(Common),
    /// Train the position and density networks.
    Dual(Common),
    /// Compare trained solutions on the test set and write plot data.
    Report(Common),
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment used when no config file is given.
    #[arg(long, value_name = "NAME", value_parser = ExperimentConfig::PRESETS)]
    preset: Option<String>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

impl Common {
    fn resolve(&self) -> systemic_risk::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Config { field: "--config".into(), msg: format!("{}: {io}", path.display()) },
                other => other,
            })?,
            (None, Some(name)) => ExperimentConfig::preset(name).expect("clap restricts preset names"),
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

type Runner = fn(&ExperimentConfig, bool) -> systemic_risk::Result<()>;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Runner) = match &cli.command {
        Command::Generate(c) => (c, commands::generate),
        Command::Oracle(c) => (c, commands::oracle),
        Command::Primal(c) => (c, commands::primal),
        Command::Dual(c) => (c, commands::dual),
        Command::Report(c) => (c, commands::report),
        Command::Config(c) => (c, commands::print_config),
    };
    match common.resolve().and_then(|cfg| run(&cfg, !common.quiet)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
