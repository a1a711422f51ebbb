//! `lungnet`: prepare a dataset, train, evaluate, tune per patient, quantize and report.

mod commands;
mod config;
mod error;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "lungnet", version, about = "Respiratory sound classification runs", propagate_version = true)]
struct Cli {
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated bit widths for quantization.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    /// Comma-separated patient ids to restrict the run to.
    #[arg(long, value_delimiter = ',')]
    patients: Option<Vec<String>>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(bits) = &self.bits {
            cfg.set_bits(bits.clone())?;
        }
        if let Some(p) = &self.patients {
            cfg.patients = Some(p.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan the dataset root, slice breathing cycles and write the manifest.
    Prepare(Common),
    /// Split patients and train the generalized model.
    Train(Common),
    /// Score a model (or a predictions file) on the test patients.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model to score: a `.rmdl` file, or a `.qmodel` applied to the trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Score an existing predictions file instead of running a model.
        #[arg(long, conflicts_with = "model")]
        predictions: Option<PathBuf>,
    },
    /// Leave-one-recording-out patient tuning and per-patient models.
    Tune(Common),
    /// Quantize the trained model at each configured bit width.
    Quantize(Common),
    /// Emit plot-ready variability and bit-sweep series.
    Report(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(c) => commands::prepare(&c.load()?),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Eval { common, model, predictions } => {
            let cfg = common.load()?;
            match predictions {
                Some(p) => commands::eval_predictions(&cfg, &p),
                None => commands::eval(&cfg, model.as_deref()),
            }
        }
        Command::Tune(c) => commands::tune(&c.load()?),
        Command::Quantize(c) => commands::quantize(&c.load()?),
        Command::Report(c) => commands::report(&c.load()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
