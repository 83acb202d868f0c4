//! `ews`: runs the early-warning pipeline stage by stage inside a run
//! directory. Every stage records its configuration hash in the run manifest
//! and refuses inputs whose producing stage ran under a different one.

pub mod config;
pub mod manifest;
pub mod plots;
pub mod stages;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ews_core::pf::EstimatorKind;
use ews_core::EwsError;
use ews_monitor::MonitorError;

pub use config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing artifact {artifact}; run `ews {stage}` first")]
    Missing { artifact: String, stage: String },
    #[error("stage `{stage}` did not finish and its outputs are incomplete; rerun `ews {stage}`")]
    Incomplete { stage: String },
    #[error("outputs of `{stage}` were produced under configuration {found}, current is {expected}; rerun `ews {stage}`")]
    Mismatch { stage: String, found: String, expected: String },
    #[error("artifact: {0}")]
    Artifact(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] EwsError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for missing or stale upstream artifacts, 3 for bad configuration.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Missing { .. } | CliError::Incomplete { .. } | CliError::Mismatch { .. } => 2,
            CliError::Config(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ews", version, about = "Respiratory-failure early-warning pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration TOML; the bundled demo configuration when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-stay work; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Run directory, overriding the configuration.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Synth {
        /// Number of stays.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the PaO2 network on synthetic blood gases.
    TrainPao2,
    /// Compute P/F tracks, failure events and labels.
    Label {
        #[arg(long)]
        estimator: Option<EstimatorKind>,
    },
    /// Build the feature matrix.
    Featurize,
    /// Train the alarm model and baseline C on every split.
    TrainEws,
    /// Event-based precision/recall, timing, plots and served predictions.
    Evaluate,
    /// Serve the run directory to the monitor.
    Serve(ServeArgs),
    /// Run every stage in order.
    Pipeline {
        /// Start the monitor service afterwards.
        #[arg(long)]
        serve: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

/// Resolved configuration with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(cli.global.config.as_deref())?;
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.global.run_dir {
        cfg.run_dir = d.clone();
    }
    match &cli.command {
        Command::Synth { n: Some(n) } => cfg.synth.n_stays = *n,
        Command::Label { estimator: Some(e) } => cfg.label.estimator = *e,
        Command::Serve(a) => {
            if let Some(h) = &a.host {
                cfg.serve.host = h.clone();
            }
            if let Some(p) = a.port {
                cfg.serve.port = p;
            }
        }
        _ => {}
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        // fails only if a pool already exists, which then keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let mut run = stages::Run::open(cfg)?;
    match cli.command {
        Command::Synth { .. } => run.synth(),
        Command::TrainPao2 => run.train_pao2(),
        Command::Label { .. } => run.label(),
        Command::Featurize => run.featurize(),
        Command::TrainEws => run.train_ews(),
        Command::Evaluate => run.evaluate(),
        Command::Serve(_) => run.serve(),
        Command::Pipeline { serve } => {
            run.pipeline()?;
            if serve {
                run.serve()?;
            }
            Ok(())
        }
    }
}
