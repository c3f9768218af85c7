//! `cbct` command-line entry point.
//!
//! Set `CBCT_THREADS` to bound the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbct_cli::{run_experiment, sweep_params, CliError, ExperimentConfig, SweepRequest};
use cbct_core::io::read_volume;
use cbct_core::metrics::{evaluate, DataRange};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbct", version, about = "Cone-beam CT reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and write the artifact tree.
    Run {
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct over a grid of alpha and lambda values.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Label of the algorithm to sweep.
        #[arg(long)]
        algorithm: Option<String>,
        /// Number of views; the first configured count by default.
        #[arg(long)]
        angles: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print PSNR, SSIM and relative error of a volume against a reference.
    Metrics {
        volume: PathBuf,
        ground_truth: PathBuf,
        /// Fixed PSNR/SSIM range; the reference range by default.
        #[arg(long)]
        data_range: Option<f64>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("CBCT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CBCT_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn load(path: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = output {
        config.output_dir = dir;
    }
    Ok(config)
}

fn fmt_metric(m: Option<cbct_core::metrics::MetricReport>) -> String {
    match m {
        Some(m) => format!("{:>9.3} {:>8.4} {:>10.5}", m.psnr, m.ssim, m.rel_error),
        None => format!("{:>9} {:>8} {:>10}", "-", "-", "-"),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config, output, seed } => {
            let mut config = load(&config, output)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let out = run_experiment(&config)?;
            println!("{:>6}  {:<12} {:>5} {:>9} {:>8} {:>10} {:>9}", "angles", "algorithm", "iters", "psnr", "ssim", "rel_err", "time_s");
            for r in &out.records {
                println!(
                    "{:>6}  {:<12} {:>5} {} {:>9.2}{}",
                    r.angles,
                    r.label,
                    r.iterations,
                    fmt_metric(r.metrics),
                    r.wall_clock_s,
                    r.error.as_ref().map(|e| format!("  FAILED: {e}")).unwrap_or_default()
                );
            }
            println!("artifacts written to {}", out.output_dir.display());
            if out.all_failed() {
                return Err(CliError::AllFailed(out.records.len()));
            }
        }
        Command::Sweep {
            config,
            alpha,
            lambda,
            algorithm,
            angles,
            output,
        } => {
            let config = load(&config, output)?;
            let request = SweepRequest {
                alphas: alpha,
                lambdas: lambda,
                algorithm,
                angles,
            };
            let rows = sweep_params(&config, &request)?;
            for row in &rows {
                let r = &row.record;
                println!(
                    "{} alpha={:.4e} lambda={:.4e} {}{}",
                    r.label,
                    r.alpha.unwrap_or(f64::NAN),
                    r.lambda.unwrap_or(0.0),
                    fmt_metric(r.metrics),
                    if row.best { "  *best*" } else { "" }
                );
            }
            println!("sweep written to {}", config.output_dir.join("sweep.csv").display());
            if rows.iter().all(|r| !r.record.ok()) {
                return Err(CliError::AllFailed(rows.len()));
            }
        }
        Command::Metrics {
            volume,
            ground_truth,
            data_range,
        } => {
            let x = read_volume(&volume)?;
            let gt = read_volume(&ground_truth)?;
            let range = data_range.map_or(DataRange::GroundTruth, DataRange::Fixed);
            let m = evaluate(&x, &gt, range)?;
            println!("psnr={:.6} ssim={:.6} rel_error={:.8}", m.psnr, m.ssim, m.rel_error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
