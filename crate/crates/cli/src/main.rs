use clap::{Parser, Subcommand};
use redlab_core::config::ExperimentConfig;
use redlab_core::pipeline::Pipeline;
use redlab_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "redlab",
    about = "Adversarial-attack victim zoo and model-parsing testbed"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one victim per attribute combination.
    TrainVictims,
    /// Generate attack records across the zoo for both image splits.
    Attack,
    /// Assemble parsing datasets in both input formats.
    BuildDataset,
    /// Train the model parsing network per configured attack.
    TrainMpn,
    /// Pretrain the perturbation estimation network (denoising only).
    TrainPen,
    /// Joint MPN + PEN training on the primary attack.
    TrainJoint,
    /// Evaluate trained parsers on held-out attack data.
    Evaluate,
    /// Train-attack x test-attack generalization matrix.
    Matrix,
    /// Transfer attack success rate matrix over the zoo.
    Transfer,
    /// Parse a dataset file with the trained MPN.
    Parse {
        /// Dataset container to parse.
        input: PathBuf,
    },
}

fn run(cli: &Cli) -> redlab_core::Result<serde_json::Value> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let mut cfg = ExperimentConfig::from_path(config_path).map_err(|e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => Error::config(format!("{}: {other}", config_path.display())),
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let pipeline = Pipeline::new(cfg, cli.out.clone())?;
    match &cli.command {
        Command::TrainVictims => pipeline.train_victims(),
        Command::Attack => pipeline.attack(),
        Command::BuildDataset => pipeline.build_dataset(),
        Command::TrainMpn => pipeline.train_mpn(),
        Command::TrainPen => pipeline.train_pen(),
        Command::TrainJoint => pipeline.train_joint(),
        Command::Evaluate => pipeline.evaluate(),
        Command::Matrix => pipeline.matrix(),
        Command::Transfer => pipeline.transfer(),
        Command::Parse { input } => pipeline.parse_input(input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: failed to configure thread pool: {e}");
        return ExitCode::from(3);
    }
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
