use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unlearn_core::runner::{
    cmd_baseline, cmd_continuous, cmd_eval, cmd_pretrain, cmd_sweep, cmd_unlearn, Overrides, SweepAxis,
};
use unlearn_core::Result;

/// Subgroup unlearning experiments on the synthetic benchmark.
#[derive(Parser)]
#[command(name = "unlearn-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Artifact root; the run directory is created beneath it.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Replaces the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pre-trained checkpoint to start from instead of the run's own.
    #[arg(long)]
    original: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            original: self.original.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark and pre-train the original model.
    Pretrain(Common),
    /// Forget, remind and restore.
    Unlearn(Common),
    /// Run one comparison method (FT, GA, FISHER_NOISE, LIP, EMMN).
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Score a candidate against the original on an archived task.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Task archive directory (written by `unlearn` under `task/`).
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tabulate accuracies over remind_steps or alpha_merge values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Average unlearned checkpoints and tabulate per-subgroup accuracy.
    Continuous {
        #[command(flatten)]
        common: Common,
        /// Model the inputs were unlearned from; defaults to the run's original.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let out = cmd_pretrain(&c.config, &c.overrides())?;
            println!(
                "pretrained: held-out accuracy {:.3} (superclass {:.3})",
                out.summary.held_out_accuracy, out.summary.held_out_superclass_accuracy
            );
        }
        Command::Unlearn(c) => {
            let out = cmd_unlearn(&c.config, &c.overrides())?;
            println!("alpha {} restored {}", out.alpha, out.restored.content_hash());
            print!("{}", out.report.to_csv());
        }
        Command::Baseline { common, method } => {
            let out = cmd_baseline(&common.config, &method, &common.overrides())?;
            print!("{}", out.report.to_csv());
        }
        Command::Eval {
            original,
            candidate,
            task,
            out_dir,
        } => {
            let report = cmd_eval(&original, &candidate, &task, &out_dir)?;
            print!("{}", report.to_csv());
        }
        Command::Sweep { common, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let table = cmd_sweep(&common.config, axis, &values, &common.overrides())?;
            print!("{}", table.to_csv());
        }
        Command::Continuous {
            common,
            reference,
            checkpoints,
        } => {
            let out = cmd_continuous(&common.config, &checkpoints, reference.as_deref(), &common.overrides())?;
            print!("{}", out.report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
