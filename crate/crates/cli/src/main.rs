//! `reggan` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data, format or check failure.
//! Every subcommand also takes `--config FILE` with `key=value` lines using
//! the flag names (or any extra setting listed in the README); flags win.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

#[derive(Parser)]
#[command(name = "reggan", version, about = "Topology-regularized GAN on synthetic blob images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a blob dataset.
    GenData(GenDataArgs),
    /// Print the exact component score of PGM images or dataset images.
    Score(ScoreArgs),
    /// Write a montage of a PGM, a dataset or samples from a trained run.
    Render(RenderArgs),
    /// Pretrain the score classifier on a dataset.
    PretrainClassifier(PretrainArgs),
    /// Train DCGAN or RegGAN.
    Train(TrainArgs),
    /// Summarize one run or compare two.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Score(_) => "score",
            Command::Render(_) => "render",
            Command::PretrainClassifier(_) => "pretrain-classifier",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

#[derive(clap::Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_comp: Option<usize>,
    #[arg(long)]
    pub max_comp: Option<usize>,
    /// Cycle target labels so every reachable label is equally common.
    #[arg(long)]
    pub stratify: bool,
}

#[derive(clap::Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// PGM files or dataset directories.
    #[arg(value_name = "PATH", required = true)]
    pub paths: Vec<std::path::PathBuf>,
    #[arg(long)]
    pub alpha: Option<f32>,
    /// CSV with path, score, label and component count.
    #[arg(long)]
    pub csv: bool,
}

#[derive(clap::Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// PGM file, dataset directory or training output directory.
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
    /// Largest component black, other components in grays.
    #[arg(long)]
    pub recolor: bool,
}

#[derive(clap::Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,
    /// Stop once held-out top-1 accuracy reaches this.
    #[arg(long)]
    pub target_acc: Option<f64>,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// dcgan or reggan.
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Pretrained classifier checkpoint.
    #[arg(long, value_name = "FILE")]
    pub classifier: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "X")]
    pub lr_g_cls: Option<f32>,
    /// Fine-tune the classifier on generated images.
    #[arg(long)]
    pub update_classifier: bool,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Run directory or metrics CSV.
    #[arg(long, value_name = "DIR")]
    pub run_a: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub run_b: Option<String>,
    /// Trailing window in metrics rows.
    #[arg(long, value_name = "W")]
    pub window: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
}

/// Worker threads from `REGGAN_THREADS`; 0 or unset means one.
fn init_threads() -> Result<(), CliError> {
    let n = match std::env::var("REGGAN_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("REGGAN_THREADS must be a non-negative integer, got {v:?}")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let name = cli.command.name();
    let result = init_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                let mut sub = sub.clone().bin_name(format!("reggan {name}"));
                eprintln!("\n{}", sub.render_usage());
            }
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
