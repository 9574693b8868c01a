use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffcast::cli::{self, RunConfig, SplitName, Suite};
use diffcast::Result;

#[derive(Parser)]
#[command(name = "diffcast", version, about = "Diffusion-based multivariate time series forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin and loss_history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the horizon after the last lookback rows of a CSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Strided sampler steps; defaults to the full chain.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of the configured dataset.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite (conditioning, mixup or head).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks for every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic series as CSV.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Augmented Dickey-Fuller statistic of every column of a CSV file.
    Adf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = diffcast::data::DEFAULT_ADF_LAGS)]
        lags: usize,
    },
}

fn load(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let r = cli::cmd_train(&load(&config, seed, out)?)?;
            println!(
                "trained {} epochs, best epoch {} (valid mse {:.6})",
                r.epochs, r.best_epoch, r.best_valid
            );
            println!("checkpoint: {}", r.checkpoint_path.display());
            println!("history: {}", r.history_path.display());
        }
        Command::Predict {
            checkpoint,
            input,
            samples,
            steps,
            seed,
            out,
        } => {
            let p = cli::cmd_predict(&checkpoint, &input, samples, steps, seed, &out)?;
            println!("forecast: {}", p.display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            samples,
            steps,
            seed,
            out,
        } => {
            let mut cfg = load(&config, seed, out)?;
            if let Some(s) = samples {
                cfg.samples = s;
            }
            if let Some(s) = steps {
                cfg.sampler_steps = s;
            }
            let r = cli::cmd_evaluate(&cfg, &checkpoint, split)?;
            println!("{} mse {:.6} over {} windows", r.split.label(), r.evaluation.mse, r.windows);
            println!("report: {}", r.report_path.display());
        }
        Command::Ablate { config, suite, seed, out } => {
            let (path, rows) = cli::cmd_ablate(&load(&config, seed, out)?, suite)?;
            for r in rows {
                println!("{:<14} mse {:.6}", r.variant, r.mean_mse());
            }
            println!("table: {}", path.display());
        }
        Command::Gradcheck { seed } => {
            let report = cli::cmd_gradcheck(seed)?;
            for (component, group, probes, err) in report.rows() {
                println!("{component:<16} {group:<40} probes {probes:>3}  max rel err {err:.3e}");
            }
            println!("all groups below {:e}", diffcast::gradsuite::SUITE_TOLERANCE);
        }
        Command::Synth { config, seed, out } => {
            println!("series: {}", cli::cmd_synth(&load(&config, seed, out)?)?.display());
        }
        Command::Adf { input, lags } => {
            for (name, stat) in cli::cmd_adf(&input, lags)? {
                println!("{name}: {stat:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
