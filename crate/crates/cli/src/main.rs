use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topotensor::pipeline::{cmd_eval, cmd_finetune, cmd_pretrain, RunConfig};
use topotensor::tensor::TtlFormat;
use topotensor::Error;

#[derive(Parser)]
#[command(name = "topotensor", version, about = "Topological and tensor-view graph contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining; writes checkpoint.bin and pretrain_loss.csv.
    Pretrain(RunArgs),
    /// Cross-validated fine-tuning from a checkpoint; writes report.json and report.csv.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to start from [default: OUT/checkpoint.bin].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render reports (files or run directories) as a markdown table.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, env = "TOPOTENSOR_DATA")]
    data_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs of the current stage.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    ph_only: bool,
    #[arg(long)]
    disable_tda: bool,
    #[arg(long)]
    disable_noise: bool,
    #[arg(long)]
    disable_ttl: bool,
    #[arg(long)]
    ttl_format: Option<TtlFormat>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy)]
enum Stage {
    Pretrain,
    Finetune,
}

impl RunArgs {
    fn into_config(self, stage: Stage) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = self.dataset {
            cfg.dataset = d;
        }
        if let Some(r) = self.data_root {
            cfg.data_root = Some(r);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            match stage {
                Stage::Pretrain => cfg.pretrain_epochs = e,
                Stage::Finetune => cfg.finetune_epochs = e,
            }
        }
        if let Some(b) = self.batch {
            cfg.batch = b;
        }
        if let Some(f) = self.ttl_format {
            cfg.ttl_format = f;
        }
        if let Some(o) = self.out {
            cfg.out = o;
        }
        let a = &mut cfg.ablations;
        a.ph_only |= self.ph_only;
        a.disable_tda |= self.disable_tda;
        a.disable_noise |= self.disable_noise;
        a.disable_ttl |= self.disable_ttl;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Checkpoint(_) => 3,
        Error::MissingFile(_) | Error::Format { .. } | Error::Io(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pretrain(args) => {
            let cfg = args.into_config(Stage::Pretrain)?;
            let out = cmd_pretrain(&cfg)?;
            if let Some(last) = out.losses.last() {
                println!(
                    "pretrained {} epochs on {} (config {}); final loss {:.5}; wrote {}",
                    out.losses.len(),
                    cfg.dataset,
                    cfg.hash(),
                    last.total,
                    cfg.out.display()
                );
            }
        }
        Command::Finetune { run, checkpoint } => {
            let cfg = run.into_config(Stage::Finetune)?;
            let r = cmd_finetune(&cfg, checkpoint.as_deref())?;
            println!(
                "{} [{}] accuracy {:.2} ± {:.2} over {} folds ({:.1} s); wrote {}",
                r.dataset,
                r.variant,
                r.mean,
                r.std,
                r.fold_accuracies.len(),
                r.wall_clock_seconds,
                cfg.out.display()
            );
        }
        Command::Eval { reports, out } => {
            cmd_eval(&reports, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
