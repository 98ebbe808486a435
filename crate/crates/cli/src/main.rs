use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hcde_core::beamsim::Scenario;
use hcde_lab::commands;
use hcde_lab::config::RunConfig;

#[derive(Parser)]
#[command(name = "hcde-lab", version, about = "Degradation-inference experiments on simulated bridge data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Replaces the seed list (for `simulate`, the base simulation seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key overrides, e.g. `hcde.with_mc=false`.
    overrides: Vec<String>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    A,
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates run-to-failure units.
    Simulate {
        /// Units per simulated scenario.
        #[arg(long)]
        units: Option<usize>,
        /// Simulate only this scenario.
        #[arg(long, value_enum, ignore_case = true)]
        scenario: Option<ScenarioArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Trains the H-CDE once per seed.
    TrainHcde {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Trains the healthy-phase residual baseline once per seed.
    TrainResidual {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Scores trained models and writes plot tables.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory of `train-hcde` or `train-residual`.
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trains and scores every ablation variant on every seed.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Trains and scores the full model at each slow step size.
    SweepSlowStep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::TrainHcde { common, .. }
            | Command::TrainResidual { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::SweepSlowStep { common, .. } => common,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let common = cli.command.common();
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(match cli.command {
            Command::Simulate { .. } => format!("simulate.seed={seed}"),
            _ => format!("seeds=[{seed}]"),
        });
    }
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let out = &common.out;
    commands::prepare_out(out, common.force)?;
    match &cli.command {
        Command::Simulate { units, scenario, .. } => {
            let sc = scenario.map(|s| match s {
                ScenarioArg::A => Scenario::A,
                ScenarioArg::B => Scenario::B,
            });
            commands::simulate(&cfg, out, *units, sc)
        }
        Command::TrainHcde { data, .. } => commands::train_hcde_cmd(&cfg, &data.data, out),
        Command::TrainResidual { data, .. } => commands::train_residual_cmd(&cfg, &data.data, out),
        Command::Evaluate { data, models, .. } => commands::evaluate(&cfg, &data.data, models, out),
        Command::Ablate { data, .. } => commands::ablate(&cfg, &data.data, out),
        Command::SweepSlowStep { data, .. } => commands::sweep_slow_step(&cfg, &data.data, out),
    }
    .with_context(|| format!("{} failed", out.display()))
}
