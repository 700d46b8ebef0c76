use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trdpd::commands::{
    cmd_bench, cmd_denoise, cmd_eval, cmd_gradcheck, cmd_ingest, cmd_simulate, cmd_train,
    GRADCHECK_TOL,
};
use trdpd::dataset::CropMode;
use trdpd_core::noise::NoiseSpec;

#[derive(Parser)]
#[command(
    name = "trdpd",
    version,
    about = "Poisson denoising with a trained nonlinear diffusion model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Centered,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Scale an image (or directory) to a peak value and apply Poisson noise
    Simulate {
        /// Input image, directory, or single-star glob
        input: PathBuf,
        /// Peak value: the maximum of the scaled clean image
        #[arg(long)]
        peak: f64,
        /// Noise seed; identical seeds reproduce identical outputs
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output image (single input) or directory
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Cut one training patch per dataset image, with a manifest
    Ingest {
        /// Directory or glob of source images
        dataset: PathBuf,
        /// Patch side length in pixels
        #[arg(long, default_value_t = 180)]
        patch: usize,
        /// Stop after this many patches
        #[arg(long)]
        count: Option<usize>,
        /// Crop placement
        #[arg(long, value_enum, default_value_t = Mode::Centered)]
        mode: Mode,
        /// Seed for random crop placement
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for patches and manifest
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a model from a config file
    Train {
        /// Training configuration (key = value file)
        config: PathBuf,
        /// Where to write the trained model
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads for per-sample gradient evaluation
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Suppress per-iteration progress lines
        #[arg(long)]
        quiet: bool,
    },
    /// Restore a Poisson-degraded image with a trained model
    Denoise {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        /// Degraded input image
        input: PathBuf,
        /// Restored output (PGM)
        #[arg(short, long)]
        output: PathBuf,
        /// Rescale the output by 255/peak for display
        #[arg(long)]
        rescale: bool,
        /// Worker threads for the per-filter convolutions
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Evaluate models over an image set and write a CSV report
    Eval {
        /// Model files; each peak must have a model trained for it
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Directory or glob of clean evaluation images
        dataset: PathBuf,
        /// Comma-separated peak values to test
        #[arg(long, value_delimiter = ',', required = true)]
        peaks: Vec<f64>,
        /// Noise seed for the degraded inputs
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output path
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Certify analytic gradients against finite differences
    Gradcheck {
        /// Optional config; defaults to two 3x3 stages on a 32x32 sample
        config: Option<PathBuf>,
    },
    /// Time the forward pass on synthetic scenes
    Bench {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated square image sizes
        #[arg(long, value_delimiter = ',', default_values_t = [256, 512])]
        sizes: Vec<usize>,
        /// Timed repetitions per size (median is reported)
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Worker threads for the multi-threaded measurement
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run(cli: Cli) -> trdpd::Result<bool> {
    match cli.command {
        Command::Simulate { input, peak, seed, output } => {
            let written = cmd_simulate(&input, NoiseSpec { peak, seed }, &output)?;
            println!("wrote {} noisy image(s)", written.len());
            Ok(true)
        }
        Command::Ingest { dataset, patch, count, mode, seed, output } => {
            let crop_mode = match mode {
                Mode::Centered => CropMode::Centered,
                Mode::Random => CropMode::Random,
            };
            let out = cmd_ingest(&dataset, &output, patch, count, crop_mode, seed)?;
            println!(
                "wrote {} patch(es) ({} skipped); manifest at {}",
                out.patches,
                out.skipped,
                out.manifest.display()
            );
            Ok(true)
        }
        Command::Train { config, output, threads, quiet } => {
            cmd_train(&config, &output, threads, quiet)?;
            Ok(true)
        }
        Command::Denoise { model, input, output, rescale, threads } => {
            cmd_denoise(&model, &input, &output, rescale, threads)?;
            println!("wrote {}", output.display());
            Ok(true)
        }
        Command::Eval { models, dataset, peaks, seed, output } => {
            cmd_eval(&models, &dataset, &peaks, seed, &output)?;
            println!("report written to {}", output.display());
            Ok(true)
        }
        Command::Gradcheck { config } => {
            let report = cmd_gradcheck(config.as_deref())?;
            Ok(report.max_rel_err() < GRADCHECK_TOL)
        }
        Command::Bench { model, sizes, runs, threads } => {
            cmd_bench(&model, &sizes, runs, threads)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
