//! `mpdpd`: config-driven runs of the mixed-precision DPD pipeline.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mpdpd", version, about = "Mixed-precision GRU digital predistortion toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every stage (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Overrides shared by the training subcommands.
#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Paired dataset CSV (overrides `signal.dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Worker threads, 0 = all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the OFDM test signal and its reference symbols.
    GenSignal {
        #[arg(long)]
        n_symbols: Option<usize>,
        #[arg(long)]
        n_channels: Option<usize>,
        #[arg(long)]
        qam_order: Option<u32>,
    },
    /// Pass an input CSV through the simulated PA.
    Simulate {
        /// Input CSV (its input columns are used).
        #[arg(long)]
        input: Option<PathBuf>,
        /// PA coefficient CSV `k,m,re,im`.
        #[arg(long)]
        pa: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        noise_dbc: Option<f64>,
    },
    /// Train the GRU behavioral model of the PA.
    TrainPa {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the DPD through a frozen PA model.
    TrainDpd {
        #[command(flatten)]
        train: TrainArgs,
        /// `fp32` or `W<w>A<a>`.
        #[arg(long)]
        precision: Option<String>,
        #[arg(long)]
        pa_checkpoint: Option<PathBuf>,
    },
    /// Run a DPD over a signal and write the predistorted CSV.
    Infer {
        /// Model checkpoint JSON.
        #[arg(long, required_unless_present = "image")]
        checkpoint: Option<PathBuf>,
        /// Run integer-only: lowers the checkpoint, or use `--image`.
        #[arg(long)]
        fixed_point: bool,
        /// Pre-lowered fixed-point image JSON.
        #[arg(long, conflicts_with_all = ["checkpoint", "float"])]
        image: Option<PathBuf>,
        /// Ignore quantization state and run in float.
        #[arg(long, conflicts_with = "fixed_point")]
        float: bool,
        /// Signal CSV (input columns).
        #[arg(long)]
        input: PathBuf,
    },
    /// ACPR, EVM and NMSE of a received signal.
    Metrics {
        /// Received CSV; output columns when present, else input columns.
        #[arg(long)]
        received: PathBuf,
        /// Reference symbols JSON (overrides `signal.reference`).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Frame sample index of the first received sample.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Ideal signal CSV for NMSE; the gain-fitted clean frame otherwise.
        #[arg(long)]
        ideal: Option<PathBuf>,
    },
    /// Operation counts, energy and power per inference.
    Cost {
        /// Checkpoint supplying dims and precision.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        precision: Option<String>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        /// Energy table CSV (overrides `energy.table`).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train and evaluate the DPD at every precision.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        pa_checkpoint: Option<PathBuf>,
        /// Comma-separated subset, e.g. `fp32,W8A8`; the full set otherwise.
        #[arg(long, value_delimiter = ',')]
        precisions: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
