use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtsnet::harness::{cmd_evaluate, cmd_simulate, cmd_train, run_experiment, ExperimentConfig, ExperimentId};

#[derive(Parser)]
#[command(version, about = "Kalman/RTS smoothing and RTSNet experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; unspecified keys take the preset of the experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Experiment whose system is simulated (when the config has no `id`).
        #[arg(long)]
        experiment: Option<ExperimentId>,
    },
    /// Train RTSNet and save the model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        experiment: Option<ExperimentId>,
        /// Dataset written by `simulate`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a trained model against the model-based smoother.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        experiment: Option<ExperimentId>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run one of: linear-mismatch, scaling, lorenz-mismatch, decimation.
    Experiment {
        id: ExperimentId,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, id: Option<ExperimentId>) -> rtsnet::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, id) {
        (Some(path), id) => ExperimentConfig::load(path, id)?,
        (None, id) => ExperimentConfig::preset(id.unwrap_or(ExperimentId::LinearMismatch)),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out.clone_from(out);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> rtsnet::Result<()> {
    match cli.command {
        Command::Simulate { common, experiment } => {
            let cfg = load(&common, experiment)?;
            let out = cmd_simulate(&cfg)?;
            println!("dataset  {}", out.dataset.display());
            println!("manifest {}", out.manifest.display());
        }
        Command::Train {
            common,
            experiment,
            data,
        } => {
            let mut cfg = load(&common, experiment)?;
            if data.is_some() {
                cfg.dataset = data;
            }
            let out = cmd_train(&cfg)?;
            println!("parameters {}", out.params);
            println!("test MSE {:.4} dB (per entry)", out.test.mse_db);
            println!("model    {}", out.model.display());
            println!("metrics  {}", out.metrics.display());
        }
        Command::Evaluate {
            common,
            experiment,
            data,
            model,
        } => {
            let mut cfg = load(&common, experiment)?;
            if data.is_some() {
                cfg.dataset = data;
            }
            if model.is_some() {
                cfg.model = model;
            }
            print!("{}", cmd_evaluate(&cfg)?.render());
        }
        Command::Experiment { id, common } => {
            let cfg = load(&common, Some(id))?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.render());
            println!("written to {}", cfg.run_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
