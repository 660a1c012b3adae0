mod commands;
mod config;
mod predictions;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use deepgeo::geodesy::Zone;
use deepgeo::Error;

use commands::{Source, Split};
use config::RunConfig;

const EXIT_CODES: &str = "\
Exit status:
  0  success
  1  internal error
  2  usage error (bad flags or arguments)
  3  I/O error (missing or unwritable file)
  4  parse error (malformed manifest, config, CSV or checkpoint)
  5  training diverged (non-finite loss)
  6  geodesy error (coordinate outside the UTM domain or pinned zone)
  7  invalid configuration
  8  data error (missing columns, misaligned tracks, too few samples)";

/// Image-based GPS correction: synthesize data, add noise, train, evaluate.
#[derive(Parser)]
#[command(name = "deepgeo", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic world and write its images and truth manifest.
    #[command(after_help = EXIT_CODES)]
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Add simulated GPS noise to a manifest, writing a new one.
    #[command(after_help = EXIT_CODES)]
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train a localizer on the training segment of a manifest.
    #[command(after_help = EXIT_CODES)]
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Compare raw, filtered and model tracks against truth.
    #[command(after_help = EXIT_CODES)]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Model directory written by `train`.
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        model: Option<PathBuf>,
        /// Evaluate an existing predictions.csv instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Print the UTM coordinates of a latitude/longitude.
    #[command(after_help = EXIT_CODES)]
    Convert {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Pin the projection to this zone, e.g. 10N.
        #[arg(long)]
        zone: Option<Zone>,
    },
    /// Write manifest and prediction tracks as GeoJSON.
    #[command(after_help = EXIT_CODES)]
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let load = |c: &Common| RunConfig::resolve(c.config.as_deref(), c.seed);
    match cli.command {
        Command::Synth { common } => commands::synth(&load(&common)?, &common.out),
        Command::Noise { common, manifest } => commands::noise(&load(&common)?, &manifest, &common.out),
        Command::Train { common, manifest } => commands::train(&load(&common)?, &manifest, &common.out),
        Command::Eval {
            common,
            manifest,
            model,
            predictions,
            split,
        } => {
            let source = match (&model, &predictions) {
                (Some(m), _) => Source::Model(m),
                (None, Some(p)) => Source::Predictions(p),
                (None, None) => unreachable!("clap requires one of --model/--predictions"),
            };
            commands::eval(&load(&common)?, &manifest, source, split, &common.out)
        }
        Command::Convert { lat, lon, zone } => {
            println!("{}", commands::convert(lat, lon, zone)?);
            Ok(())
        }
        Command::Export {
            common,
            manifest,
            predictions,
        } => commands::export(&load(&common)?, &manifest, predictions.as_deref(), &common.out),
    }
}

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => (3, "io"),
                Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Checkpoint(_) => (4, "parse"),
                Error::Divergence { .. } => (5, "divergence"),
                Error::OutOfBand { .. } | Error::Domain(_) | Error::Distortion { .. } => (6, "geodesy"),
                Error::Config(_) => (7, "config"),
                Error::EmptyInput(_)
                | Error::IncompleteSample { .. }
                | Error::InsufficientData(_)
                | Error::Alignment { .. }
                | Error::Image(_)
                | Error::Shape { .. }
                | Error::Key(_) => (8, "data"),
                Error::Rank(_) | Error::Tape => (1, "internal"),
            };
        }
        if cause.is::<std::io::Error>() {
            return (3, "io");
        }
        if cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return (4, "parse");
        }
    }
    (1, "internal")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("deepgeo: {kind} error: {e:#}");
            ExitCode::from(code)
        }
    }
}
