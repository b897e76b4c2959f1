//! `ssdda`: dataset generation, training, evaluation, mask previews and
//! ablation sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! format error, 4 numeric failure during training.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ssdda", version, about = "Semi-supervised dual-domain adaptation for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic two-domain benchmark and its target splits.
    GenData(GenDataArgs),
    /// Train a student / teacher pair on a dataset split.
    Train(TrainArgs),
    /// Score a checkpoint on one section of a split.
    Eval(EvalArgs),
    /// Build a mixing mask from a label map and mix two image / label pairs.
    MixPreview(MixPreviewArgs),
    /// Run every mode over several label budgets and seeds.
    Ablate(AblateArgs),
    /// Write a randomly initialised checkpoint.
    Init(InitArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Falls back to `SSDDA_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    pub n_source: usize,
    #[arg(long, default_value_t = 200)]
    pub n_target: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Labeled-target budgets to write split files for.
    #[arg(long, value_delimiter = ',', default_value = "8,16,40,80")]
    pub splits: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// Disable the target-domain appearance shift.
    #[arg(long)]
    pub no_shift: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: usize,
    /// Output directory; defaults to `<data>/runs/<mode>-n<labels>-s<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Key = value file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// dual, cross-only or intra-only.
    #[arg(long)]
    pub mode: Option<String>,
    /// classmix or complexmix.
    #[arg(long)]
    pub mix: Option<String>,
    /// ComplexMix blocks per side.
    #[arg(long)]
    pub p: Option<usize>,
    /// Sets the sampling, initialisation and mask seeds. Without it the
    /// config file seed is used, then `SSDDA_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split file seed; defaults to the run seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ema_alpha: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: usize,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// labeled, unlabeled or val.
    #[arg(long, default_value = "val")]
    pub section: String,
    /// Class subset for the mean, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
}

#[derive(Args, Debug)]
pub struct MixPreviewArgs {
    #[arg(long)]
    pub image_a: PathBuf,
    /// Label map of `a`; the mask is built from it.
    #[arg(long)]
    pub label_a: PathBuf,
    #[arg(long)]
    pub image_b: PathBuf,
    #[arg(long)]
    pub label_b: PathBuf,
    #[arg(long, default_value = "classmix")]
    pub variant: String,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub labels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "cross-only,intra-only,dual")]
    pub modes: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// Also write the table here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::MixPreview(a) => commands::mix_preview(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Init(a) => commands::init(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
