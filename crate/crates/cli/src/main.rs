//! `cvegan`: every stage of the artifact behind one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cvegan", version, about = "Compressed video enhancement with a hypersphere GAN")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `train.epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed propagated to every seeded component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Leave-one-database-out search for the perceptual loss weights.
    CalibrateLoss,
    /// Code source frames over the QP ladder and store aligned block pairs.
    MakeDataset,
    /// Train the generator on the perceptual loss alone.
    TrainStage1,
    /// Adversarial fine-tuning of a stage-1 generator.
    TrainStage2 {
        /// Generator checkpoint; `<out-dir>/generator_stage1.ckpt` by default.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Discriminator checkpoint to resume from.
        #[arg(long)]
        discriminator: Option<PathBuf>,
    },
    /// Post-process decoded frames.
    Enhance,
    /// Upsample and enhance half-resolution decoded frames.
    SraRestore,
    /// Anchor versus enhanced coding with BD-rates.
    Evaluate,
    /// Finite-difference check of the geodesic moment gradients.
    Gradcheck,
    /// Parameter counts and probe timings relative to a baseline.
    Complexity,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.common, &cli.command) {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(n)) => {
            eprintln!("cvegan: {n} failure(s) recorded; see the error report");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("cvegan: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
