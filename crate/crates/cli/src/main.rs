use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpsf_cli::config::thread_count;
use rpsf_cli::error::{CliError, CliResult};
use rpsf_cli::stages::{self, StageReport};

#[derive(Parser)]
#[command(name = "rpsf", version, about = "Rotating-PSF coded imaging: masks, PSFs, rendering, sensing, restoration, depth")]
struct Cli {
    /// Worker threads; falls back to RPSF_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase mask spec and height map.
    Mask(stages::MaskArgs),
    /// PSF stack for a mask over a range of defocus planes.
    Psf(stages::PsfArgs),
    /// Coded image from an all-in-focus image and a depth layout.
    Render(stages::RenderArgs),
    /// Bayer sampling, noise, quantization and demosaicking.
    Sense(stages::SenseArgs),
    /// Layered Wiener restoration.
    Deblur(stages::DeblurArgs),
    /// Per-pixel depth plane estimation.
    Depth(stages::DepthArgs),
    /// Gradient ascent over the mask shape.
    Optimize(stages::OptimizeArgs),
    /// PSNR, SSIM and RMSE between two images.
    Metrics(stages::MetricsArgs),
    /// Every stage from one config file.
    RunAll(stages::RunAllArgs),
}

fn run(cli: Cli) -> CliResult<StageReport> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Mask(a) => stages::mask_stage(a, None),
        Command::Psf(a) => stages::psf_stage(a, None),
        Command::Render(a) => stages::render_stage(a, None),
        Command::Sense(a) => stages::sense_stage(a, None),
        Command::Deblur(a) => stages::deblur_stage(a, None),
        Command::Depth(a) => stages::depth_stage(a, None),
        Command::Optimize(a) => stages::optimize_stage(a),
        Command::Metrics(a) => stages::metrics_stage(a),
        Command::RunAll(a) => stages::run_all(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(report) => {
            for (name, value) in &report.values {
                log::info!("{name} = {value}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rpsf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
