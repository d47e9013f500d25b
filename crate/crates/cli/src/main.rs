//! `tivis` command-line interface.

mod commands;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tivis", version, about = "Transformation-invariant class visualization on small CNNs")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = tivis_core::train::REFERENCE_SEED)]
    pub seed: u64,
    /// Model file to read (or, for `train`, to write when --out is absent).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write a structured text report here.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic shapes dataset to a directory of PPM files.
    MakeDataset {
        #[arg(long, default_value_t = tivis_core::train::REFERENCE_COUNT_PER_CLASS)]
        count_per_class: usize,
    },
    /// Train the reference classifier.
    Train(TrainArgs),
    /// Top-k predictions for images or directories of images.
    Classify(ClassifyArgs),
    /// Transformation-invariant visualization of one class.
    Visualize(VisualizeArgs),
    /// Plain gradient ascent without transforms.
    Baseline(BaselineArgs),
    /// Visualize from every gray level and rank the results by entropy.
    SweepInit(SweepArgs),
    /// 2-D entropy, entropy map and second-order entropy of an image.
    Entropy(EntropyArgs),
    /// Color inversion (255 - v per channel).
    Invert(InvertArgs),
    /// Replace a rectangle with the model's zero input.
    Screen(ScreenArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory from `make-dataset`; generated from --seed if absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = tivis_core::train::REFERENCE_COUNT_PER_CLASS)]
    pub count_per_class: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// PPM files or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short, default_value_t = 3)]
    pub k: usize,
    /// Comma-separated subset of original, screened, inverted.
    #[arg(long, default_value = "original")]
    pub variants: String,
    /// Screening rectangle `x,y,w,h`, required for the screened variant.
    #[arg(long)]
    pub rect: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    /// Target class name or index.
    #[arg(long)]
    pub class: String,
    /// `gray:<level>`, `noise:<max>` (seeded) or a PPM path.
    #[arg(long, default_value = "gray:0")]
    pub init: String,
    #[arg(long, default_value_t = 0.99)]
    pub q_target: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
    #[arg(long, default_value_t = 500)]
    pub max_inner_steps: usize,
    /// `l2_normalized` or `raw`.
    #[arg(long, default_value = "l2_normalized")]
    pub gradient_mode: String,
    /// `softmax_confidence` or `logit`.
    #[arg(long, default_value = "softmax_confidence")]
    pub objective: String,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long, default_value = "rot:10x36")]
    pub schedule: String,
    #[arg(long, default_value = "rot-sweep:10")]
    pub battery: String,
    #[arg(long, default_value_t = 0.8)]
    pub q_test: f64,
    /// Defaults to three passes through the schedule.
    #[arg(long)]
    pub max_outer: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Battery used to score the result.
    #[arg(long, default_value = "rot-sweep:10")]
    pub battery: String,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Comma-separated gray levels; defaults to 0,10,...,250,255.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long, default_value_t = tivis_core::entropy::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = tivis_core::entropy::DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Args, Debug)]
pub struct EntropyArgs {
    pub image: PathBuf,
    #[arg(long, default_value_t = tivis_core::entropy::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = tivis_core::entropy::DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScreenArgs {
    pub image: PathBuf,
    /// Rectangle `x,y,w,h`.
    #[arg(long)]
    pub rect: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", errors::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
