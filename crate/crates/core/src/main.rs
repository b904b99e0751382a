use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bda_core::cli::{
    cmd_adapt, cmd_eval, cmd_folds, cmd_sweep, cmd_synth, cmd_train, exit_code, Overrides,
    RunConfig, SweepMode,
};

#[derive(Parser)]
#[command(name = "bda", about = "Building-damage assessment pipeline", version)]
struct Cli {
    /// Cap the rayon worker count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the resolution schedule (comma-separated GSD values).
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<f64>>,
    /// Grade scheme: fine or ahr.
    #[arg(long)]
    scheme: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> bda_core::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            resolutions: self.resolutions.clone(),
            scheme: self.scheme.clone(),
        })?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PNG pairs, masks, manifest).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        scenes: usize,
        #[arg(long, default_value_t = 128)]
        side: usize,
        #[arg(long, default_value_t = 4)]
        events: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both stages on the manifest's train split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate the checkpoint ensemble on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Score ground truth against itself (sanity check).
        #[arg(long)]
        oracle: bool,
    },
    /// Resolution-perturbation sweep.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// symmetric or asymmetric.
        #[arg(long, default_value = "symmetric")]
        mode: String,
    },
    /// Event-level cross-validation.
    Folds {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fine-tuning adaptation curve on a new event.
    Adapt {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fine-tuning shares in [0, 0.5].
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.25, 0.5])]
        share: Vec<f64>,
    },
}

fn run(cli: Cli) -> bda_core::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| bda_core::Error::InvalidArgument(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Synth { seed, scenes, side, events, out } => {
            cmd_synth(seed, scenes, side, events, &out)
        }
        Command::Train { config } => cmd_train(&config.load()?),
        Command::Eval { config, oracle } => cmd_eval(&config.load()?, oracle),
        Command::Sweep { config, mode } => cmd_sweep(&config.load()?, mode.parse::<SweepMode>()?),
        Command::Folds { config } => cmd_folds(&config.load()?),
        Command::Adapt { config, share } => cmd_adapt(&config.load()?, &share),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
