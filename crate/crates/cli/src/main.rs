use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use entroseg_core::evaluation::Averaging;

mod commands;
mod options;
mod render;
mod report;

use commands::{Classify, Failure, Sink};
use options::CommonArgs;

/// Text detection in high-entropy images: entropy scoring, super-pixel
/// segmentation and ensemble detection over the segments.
#[derive(Debug, Parser)]
#[command(name = "entroseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grayscale Shannon entropy and scene/product class of an image.
    Entropy { image: PathBuf },
    /// Segment an image; writes the segment list and, with --out, a label map.
    Segment { image: PathBuf },
    /// Run the full pipeline; writes detections and, with --out, an overlay.
    Detect {
        image: PathBuf,
        /// ICDAR-style ground truth to score against and draw in red.
        #[arg(long, value_name = "FILE")]
        gt: Option<PathBuf>,
    },
    /// Detect and score every image of a directory against its
    /// `gt_<name>.txt` (next to the image or under `gt/`).
    Evaluate {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
        averaging: AveragingArg,
        /// Print the plain-text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = cli.common.load_config().input()?;
    let sink = Sink::new(cli.common.out.clone())?;
    match &cli.command {
        Command::Entropy { image } => commands::entropy(image, &cfg, &sink),
        Command::Segment { image } => commands::segment(image, &cfg, &sink),
        Command::Detect { image, gt } => commands::detect(image, gt.as_deref(), &cfg, &sink),
        Command::Evaluate { dataset, averaging, table } => {
            commands::evaluate(dataset, (*averaging).into(), *table, &cfg, &sink)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENTROSEG_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
