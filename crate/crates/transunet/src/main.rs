use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transunet::commands::{self, SplitChoice};
use transunet::run_config::RunConfig;
use transunet::tables::curve_record;
use transunet::Result;
use transunet_core::train::AblationAxis;

#[derive(Parser)]
#[command(name = "transunet", version, about = "TransUNet segmentation: phantom data, training, evaluation, ablations")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. --set train.lr=0.005 (repeatable, applied in order).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom dataset (volumes + manifest) into --out.
    GenerateData,
    /// Train a model; writes the checkpoint, loss curve and validation metrics.
    Train,
    /// Evaluate a checkpoint on one split of the dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitChoice,
    },
    /// Train and evaluate one model per value of an ablation axis.
    Ablate {
        /// skips | patch | resolution | scale
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Segment an intensity volume.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Also write per-slice PPM overlays.
        #[arg(long)]
        overlay: bool,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for assignment in &cli.set {
        cfg.set_assignment(assignment)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::GenerateData => {
            let n = commands::cmd_generate_data(&cfg)?;
            println!("wrote {n} cases");
        }
        Command::Train => {
            let summary = commands::cmd_train(&cfg)?;
            if let Some(last) = summary.curve.last() {
                println!("final {}", curve_record(last));
            }
            if let Some(report) = &summary.val_report {
                println!("{report}");
            }
            println!("checkpoint {}", summary.checkpoint.display());
        }
        Command::Eval { checkpoint, split } => {
            let report = commands::cmd_eval(&cfg, &checkpoint, split)?;
            println!("{report}");
        }
        Command::Ablate { axis } => {
            let table = commands::cmd_ablate(&cfg, axis)?;
            println!("{table}");
        }
        Command::Predict { checkpoint, input, overlay } => {
            let summary = commands::cmd_predict(&cfg, &checkpoint, &input, overlay)?;
            println!("prediction {}", summary.prediction.display());
            if overlay {
                println!("{} overlay slices", summary.overlays);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code())
        }
    }
}
