use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "growlab", version, about = "Progressive-growth training laboratory")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.log_every=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: `out` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Required by every subcommand that draws random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage, or a multi-stage growth plan.
    Train,
    /// Grow a checkpoint to `grow.target` and verify preservation.
    Grow,
    /// Compare logits of two checkpoints; exits 1 on failure.
    VerifyGrowth,
    /// Wall-clock schedule of a staged run.
    Plan,
    /// Training FLOPs of registry or custom architectures.
    Cost,
    /// Energy and emissions accounting.
    Carbon,
    /// Grid search of learning rate, init std and temperature on a proxy.
    Hpsearch,
    /// Fit a width power law and extrapolate.
    PredictLoss,
    /// Activation-scale check across widths.
    CoordCheck,
    /// Generate evaluation instances as JSONL.
    GenEval,
    /// Score model outputs against instances.
    Eval,
    /// Byte-tokenize text files into a token stream.
    Tokenize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Grow => "grow",
            Command::VerifyGrowth => "verify-growth",
            Command::Plan => "plan",
            Command::Cost => "cost",
            Command::Carbon => "carbon",
            Command::Hpsearch => "hpsearch",
            Command::PredictLoss => "predict-loss",
            Command::CoordCheck => "coord-check",
            Command::GenEval => "gen-eval",
            Command::Eval => "eval",
            Command::Tokenize => "tokenize",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = config::load(cli.config.as_deref(), &cli.overrides)?;
    let name = cli.command.name();
    if commands::is_stochastic(name) && cli.seed.is_none() {
        return Err(CliError::Config(format!("`{name}` requires --seed")));
    }
    let out = cli.out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Ctx { config, out, seed: cli.seed };
    match cli.command {
        Command::Train => commands::train(&ctx),
        Command::Grow => commands::grow(&ctx),
        Command::VerifyGrowth => commands::verify_growth(&ctx),
        Command::Plan => commands::plan(&ctx),
        Command::Cost => commands::cost(&ctx),
        Command::Carbon => commands::carbon(&ctx),
        Command::Hpsearch => commands::hpsearch(&ctx),
        Command::PredictLoss => commands::predict_loss_cmd(&ctx),
        Command::CoordCheck => commands::coord_check(&ctx),
        Command::GenEval => commands::gen_eval(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Tokenize => commands::tokenize(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
