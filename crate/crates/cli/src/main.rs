//! `dccgcn`: train dual-channel consistency GCNs, sweep calibration hops,
//! evaluate the agreement bounds and generate synthetic graphs.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
//! during training, 1 anything else (I/O).

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dccgcn::graph::{SplitSpec, SyntheticSpec};
use dccgcn::theory::{BoundKind, SimSpec};
use dccgcn::training::Preset;

use run::{resolve, DataSource, DatasetFormat, Overrides};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(dccgcn::Error),
}

impl From<dccgcn::Error> for CliError {
    fn from(e: dccgcn::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dccgcn::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Divergence { .. } | E::Numeric { .. }) => 3,
            CliError::Core(E::Contract(_) | E::Format { .. } | E::Json(_)) => 2,
            CliError::Core(E::Io(_) | E::Dimension { .. }) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "dccgcn", version, about = "Dual-channel consistency GCN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.json, embeddings.csv and model.bin.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Draw this many training nodes per class.
        #[arg(long, conflicts_with = "label_fraction")]
        per_class: Option<usize>,
        /// Draw this fraction of all nodes for training.
        #[arg(long)]
        label_fraction: Option<f64>,
        /// Calibration hop count.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Closed-form bounds and the two-classifier simulator.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Train once per calibration hop count and seed; writes hops.csv.
    HopSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Hop counts to try.
        #[arg(long = "m", value_delimiter = ',', default_value = "1,2,3,4")]
        hops: Vec<usize>,
        /// Seeds 0..N; each fixes the split (and the graph, for synthetic data).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a stochastic-block-model dataset in the generic format.
    Synth {
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        c: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 0.6)]
        separation: f64,
        #[arg(long, default_value_t = 0.03)]
        p_intra: f64,
        #[arg(long, default_value_t = 0.0025)]
        p_inter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by every command that trains.
#[derive(Args)]
struct ConfigArgs {
    /// Dataset directory. Without it `hop-sweep` uses the default synthetic
    /// graph.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetFormat::Generic)]
    format: DatasetFormat,
    /// JSON training config, or the run.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in hyperparameter row (default cora).
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_calibration: bool,
    #[arg(long)]
    no_aggregation: bool,
}

impl ConfigArgs {
    fn overrides(&self, split: Option<SplitSpec>, m: Option<usize>) -> Overrides {
        Overrides {
            preset: self.preset,
            data: self.dataset.as_ref().map(|path| DataSource::Path { path: path.clone(), format: self.format }),
            fallback_data: None,
            split,
            seed: self.seed,
            epochs: self.epochs,
            m,
            no_calibration: self.no_calibration,
            no_aggregation: self.no_aggregation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    /// Channel-1 accuracy bound on disagreements, (p1 - p1 p2)/(1 - p1 p2).
    Theorem1,
    /// The same accuracy with both-wrong agreements and correlation gamma.
    Refined,
    /// Accuracy gain bound of calibration.
    Gain,
    /// Gain bound with the weaker channel's accuracy.
    EffectiveGain,
}

impl From<BoundArg> for BoundKind {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Theorem1 => BoundKind::Theorem1,
            BoundArg::Refined => BoundKind::Theorem1Refined,
            BoundArg::Gain => BoundKind::Theorem2,
            BoundArg::EffectiveGain => BoundKind::EffectiveGain,
        }
    }
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Print one bound value.
    Bound {
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
        #[arg(long, default_value_t = 7)]
        c: usize,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = BoundArg::Theorem1)]
        kind: BoundArg,
    },
    /// Monte Carlo run of two symmetric-error classifiers; writes sim.json.
    Simulate {
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 7)]
        c: usize,
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Gain bounds over a (p1, p2) grid; writes surface.csv.
    Sweep {
        #[arg(long = "c", value_delimiter = ',', default_value = "3,7,70")]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { cfg, per_class, label_fraction, m, out } => {
            let split = per_class.map(SplitSpec::PerClass).or(label_fraction.map(SplitSpec::Fraction));
            let run = resolve(cfg.config.as_deref(), cfg.overrides(split, m))?;
            commands::train_command(&run, &out)
        }
        Command::Theory { command } => match command {
            TheoryCommand::Bound { p1, p2, c, gamma, kind } => commands::bound_command(kind.into(), p1, p2, c, gamma),
            TheoryCommand::Simulate { n, c, p1, p2, rho, seed, out } => {
                commands::simulate_command(&SimSpec { n, c, p1, p2, rho, seed }, &out)
            }
            TheoryCommand::Sweep { classes, step, gamma, out } => commands::sweep_command(&classes, step, gamma, &out),
        },
        Command::HopSweep { cfg, hops, seeds, out } => {
            let flags = Overrides { fallback_data: Some(DataSource::Synthetic), ..cfg.overrides(None, None) };
            let run = resolve(cfg.config.as_deref(), flags)?;
            commands::hop_sweep_command(&run, &hops, seeds, &out)
        }
        Command::Synth { n, c, d, separation, p_intra, p_inter, seed, out } => {
            commands::synth_command(&SyntheticSpec { n, c, d, separation, p_intra, p_inter, seed }, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
