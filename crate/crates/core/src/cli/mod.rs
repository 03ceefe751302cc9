//! Experiment commands behind the `encmac` binary.
//!
//! Every command reads one [`ExperimentConfig`], writes its artifacts into
//! the output directory (which must exist) and is deterministic in the
//! master seed. Auxiliary randomness uses [`stream_seed`](crate::search::stream_seed)
//! with the stream tags below; the search itself uses the master seed.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_finetune, cmd_search, cmd_simulate, cmd_sweep, cmd_table, write_atomic, EvalReport, FinetuneReport,
    SimulateSummary, SplitMetrics,
};
pub use config::{ExperimentConfig, SearchSection, SimulateSection, SweepSection, TrainSection};

use crate::error::{Error, Result};
use crate::quant::QuantScheme;

/// Stream tag for generated datasets.
pub const STREAM_DATASET: u64 = 1;
/// Stream tag for float network initialisation and shuffling.
pub const STREAM_FLOAT_TRAIN: u64 = 2;
/// Stream tag for fine-tuning minibatch order.
pub const STREAM_FINETUNE: u64 = 3;
/// Stream tag for random array-simulation operands.
pub const STREAM_SIMULATE: u64 = 4;

#[derive(Parser, Debug)]
#[command(author, version, about, long_about = None)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; they override the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct GlobalArgs {
    /// Experiment config file (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Operand width W; both operands become uniform signed W-bit
    #[arg(long, global = true)]
    pub width: Option<u32>,

    /// Smallest output width for the width search
    #[arg(long, global = true)]
    pub min_width: Option<usize>,

    /// Largest output width for the width search
    #[arg(long, global = true)]
    pub max_width: Option<usize>,

    /// Sample budget per output width
    #[arg(long, global = true)]
    pub samples: Option<usize>,

    /// Target RMSE; enables the width binary search
    #[arg(long, global = true)]
    pub target_rmse: Option<f64>,

    /// Array size N
    #[arg(long, global = true)]
    pub array_size: Option<usize>,

    /// Number of N×N input matrices streamed through the array
    #[arg(long, global = true)]
    pub matrices: Option<usize>,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output directory; must exist
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the exact product table as CSV
    Table,
    /// Search an encoding at one width, or the narrowest width meeting a target RMSE
    Search(SearchArgs),
    /// Run the encoded and systolic arrays on random operands
    Simulate(SimulateArgs),
    /// Fine-tune position weights on a toy network
    Finetune(TrainArgs),
    /// Evaluate a toy network with exact and encoded products
    Eval(TrainArgs),
    /// RMSE-vs-width curve and array latency/cost table
    Sweep,
}

#[derive(Args, Debug, Default)]
pub struct SearchArgs {
    /// Output width for a single-width search (default 6W)
    #[arg(long)]
    pub output_width: Option<usize>,

    /// Disable the stability stop and spend the whole sample budget
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Encoding JSON produced by `search`
    #[arg(long)]
    pub encoding: Option<PathBuf>,

    /// Also write every output matrix as CSV
    #[arg(long)]
    pub write_outputs: bool,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Encoding JSON produced by `search`
    #[arg(long)]
    pub encoding: Option<PathBuf>,

    /// CSV dataset (`features...,label`); Gaussian blobs when omitted
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Quantized network JSON; trained and quantized when omitted
    #[arg(long)]
    pub network: Option<PathBuf>,

    /// Fine-tuning epochs
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Fine-tuning learning rate
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(w) = global.width {
        let s = QuantScheme::uniform(w)?;
        cfg.operand1 = s.clone();
        cfg.operand2 = s;
    }
    if global.min_width.is_some() {
        cfg.search.min_width = global.min_width;
    }
    if global.max_width.is_some() {
        cfg.search.max_width = global.max_width;
    }
    if let Some(n) = global.samples {
        cfg.search.max_samples = n;
    }
    if global.target_rmse.is_some() {
        cfg.search.target_rmse = global.target_rmse;
    }
    if let Some(n) = global.array_size {
        cfg.simulate.array_size = n;
    }
    if let Some(m) = global.matrices {
        cfg.simulate.matrices = m;
    }
    if let Some(j) = global.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &global.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_command_args(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Search(a) => {
            if a.output_width.is_some() {
                cfg.search.output_width = a.output_width;
            }
            if a.no_early_stop {
                cfg.search.stability_epsilon = 0.0;
            }
        }
        Command::Simulate(a) => {
            if a.encoding.is_some() {
                cfg.simulate.encoding = a.encoding.clone();
            }
            cfg.simulate.write_outputs |= a.write_outputs;
        }
        Command::Finetune(a) | Command::Eval(a) => {
            if a.encoding.is_some() {
                cfg.train.encoding = a.encoding.clone();
            }
            if a.dataset.is_some() {
                cfg.train.dataset = a.dataset.clone();
            }
            if a.network.is_some() {
                cfg.train.network = a.network.clone();
            }
            if let Some(e) = a.epochs {
                cfg.train.finetune_epochs = e;
            }
            if let Some(lr) = a.lr {
                cfg.train.finetune_lr = lr;
            }
        }
        Command::Table | Command::Sweep => {}
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    apply_command_args(&mut cfg, &cli.command);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let start = std::time::Instant::now();
    let result = pool.install(|| match &cli.command {
        Command::Table => cmd_table(&cfg).map(|_| ()),
        Command::Search(_) => cmd_search(&cfg).map(|_| ()),
        Command::Simulate(_) => cmd_simulate(&cfg).map(|_| ()),
        Command::Finetune(_) => cmd_finetune(&cfg).map(|_| ()),
        Command::Eval(_) => cmd_eval(&cfg).map(|_| ()),
        Command::Sweep => cmd_sweep(&cfg).map(|_| ()),
    });
    eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    result
}

/// Process exit status for an error: 2 usage or config, 3 unreachable
/// target, 4 diverged training, 1 anything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::TargetUnreachable { .. } => 3,
        Error::TrainingDiverged { .. } => 4,
        Error::Io { .. } | Error::CalibrationFailed(_) => 1,
        Error::CodeOutOfRange { .. }
        | Error::UnsupportedWidth(_)
        | Error::InvalidScheme(_)
        | Error::Contract(_)
        | Error::Format { .. } => 2,
    }
}
