use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, LevelFilter};
use rfunlearn::commands::{self, Mode};
use rfunlearn::config::ExperimentConfig;
use rfunlearn::workdir::{parse_labels, Workdir};
use rfunlearn::{logging, Error, Result};

/// Synthetic RF fingerprint experiments with input-perturbation unlearning.
#[derive(Parser)]
#[command(name = "rfunlearn", version)]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment directory; overrides `paths.workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log one JSON object per line.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the fleet's IQ recordings and the dataset manifest.
    Gen,
    /// Turn recordings into spectrogram caches.
    Featurize,
    /// Train the classifier on every device.
    Train {
        /// Layer list, e.g. `conv2d(8,3,1),relu,maxpool,flatten,dense(6)`.
        #[arg(long)]
        arch: Option<String>,
    },
    /// Train from scratch without some devices.
    Retrain {
        /// Device ids to leave out, e.g. `3` or `0,1`.
        #[arg(long, value_parser = labels)]
        exclude: Labels,
    },
    /// Optimize a forget vector or combination coefficients.
    Unlearn {
        /// Device ids to forget, e.g. `3` or `0,1`.
        #[arg(long, value_parser = labels)]
        forget: Labels,
        /// One jointly optimized vector, or a combination of per-device vectors.
        #[arg(long, value_enum, default_value_t = CliMode::SingleV)]
        mode: CliMode,
    },
    /// Metrics of the original model and any stored vector for a target.
    Eval {
        /// Target whose stored vectors are evaluated.
        #[arg(long, value_parser = labels)]
        forget: Labels,
    },
    /// Merge metrics rows and dump Grad-CAM heatmaps.
    Report {
        /// Forgotten-class test samples to render per stored vector.
        #[arg(long, default_value_t = 4)]
        heatmaps: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    SingleV,
    ComV,
}

type Labels = std::collections::BTreeSet<u16>;

fn labels(s: &str) -> std::result::Result<Labels, String> {
    parse_labels(s).map_err(|e| e.to_string())
}

/// Runs one command; `Ok(false)` means it finished without converging.
fn run(cli: Cli) -> Result<bool> {
    let mut cfg: ExperimentConfig = commands::read_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let root = cli
        .workdir
        .or_else(|| cfg.workdir.clone())
        .ok_or_else(|| Error::Config("no workdir: pass --workdir or set paths.workdir".into()))?;
    let wd = Workdir::create(root)?;
    let _lock = wd.lock()?;
    commands::record_config(&cfg, &wd)?;
    match cli.command {
        Command::Gen => {
            commands::gen(&cfg, &wd)?;
        }
        Command::Featurize => {
            commands::featurize(&cfg, &wd)?;
        }
        Command::Train { arch } => {
            commands::train_model(&cfg, &wd, arch.as_deref())?;
        }
        Command::Retrain { exclude } => {
            commands::retrain(&cfg, &wd, &exclude)?;
        }
        Command::Unlearn { forget, mode } => {
            let mode = match mode {
                CliMode::SingleV => Mode::SingleV,
                CliMode::ComV => Mode::ComV,
            };
            return Ok(commands::unlearn(&cfg, &wd, &forget, mode)?.converged);
        }
        Command::Eval { forget } => {
            for record in commands::eval(&cfg, &wd, &forget)? {
                print!("{}", record.to_json()?);
            }
        }
        Command::Report { heatmaps } => {
            let s = commands::report(&cfg, &wd, heatmaps)?;
            println!("{} rows, {} heatmaps", s.rows, s.heatmaps);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(cli.json_logs, LevelFilter::Info);
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
