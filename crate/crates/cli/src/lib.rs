//! `dyadic` command-line pipeline. Every stage reads and writes files, so
//! each intermediate can be inspected and each stage re-run on its own.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 usage error,
//! 3 internal failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::error;

pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;
pub mod report;

pub use config::{parse_config, validate_config, PipelineConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or missing artifact (exit 1).
    Validation(String),
    /// Failure inside a pipeline stage (exit 3).
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_INVALID,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dyadic::Error> for CliError {
    fn from(e: dyadic::Error) -> Self {
        use dyadic::Error as E;
        match e {
            E::Training { .. }
            | E::NonFiniteLoss { .. }
            | E::Generation(_)
            | E::Resample(_)
            | E::Undefined(_)
            | E::Matrix(_) => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dyadic",
    version,
    about = "Embed, segment and analyze dyadic pose recordings"
)]
#[command(
    after_help = "Exit codes: 0 ok, 1 invalid input, 2 usage error, 3 internal error.\n\
The global seed is taken from --seed, else the DYADIC_SEED environment variable, else the config file."
)]
pub struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Global seed; overrides DYADIC_SEED and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import keypoint CSVs (and `<stem>.labels.csv` annotations) as a dataset directory
    Ingest {
        /// Directory of keypoint CSVs with optional `.meta.json` sidecars
        #[arg(long)]
        poses: PathBuf,
        /// Directory holding annotation CSVs, if not next to the poses
        #[arg(long)]
        labels: Option<PathBuf>,
        /// JSON column schema mapping canonical names to file columns
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a planted three-state synthetic dataset
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Self-supervised pretraining on the four pretext tasks
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from an encoder checkpoint
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame embeddings from a pretrained encoder
    Embed {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Encoder checkpoint or the pretrain output directory
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a frame classifier on annotated sequences
    Finetune {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained encoder; a random encoder is used when omitted
        #[arg(long)]
        model: Option<PathBuf>,
        /// Train only the linear decoder
        #[arg(long)]
        freeze: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label every frame with a trained classifier
    Annotate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Classifier checkpoint or the finetune output directory
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an HMM per state count and build the motif catalog
    Segment {
        /// `embeddings.ndjson` or the embed output directory
        #[arg(long)]
        embeddings: PathBuf,
        /// Dataset directory, used for the frame rate
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster motifs into macro-categories and pick prototypes
    Prototypes {
        /// Segment output directory
        #[arg(long)]
        segment: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bout statistics, coverage, transitions, group tests and feature PETHs
    Analyze {
        /// Prototypes output directory
        #[arg(long)]
        prototypes: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spike-train PETHs aligned to label onsets
    Peth {
        /// Per-frame labels (`frame,state`)
        #[arg(long)]
        labels: PathBuf,
        /// Spike times (`unit,timestamp_s`)
        #[arg(long)]
        spikes: PathBuf,
        #[arg(long, default_value_t = dyadic::dataset::DEFAULT_FPS)]
        fps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over encoder configurations
    Tune {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Embed { .. } => "embed",
            Command::Finetune { .. } => "finetune",
            Command::Annotate { .. } => "annotate",
            Command::Segment { .. } => "segment",
            Command::Prototypes { .. } => "prototypes",
            Command::Analyze { .. } => "analyze",
            Command::Peth { .. } => "peth",
            Command::Tune { .. } => "tune",
        }
    }
}

/// Config, seed override and validation, without running anything.
pub fn resolve_config(
    path: Option<&Path>,
    seed: Option<u64>,
) -> Result<PipelineConfig, Vec<String>> {
    let mut cfg = match path {
        Some(p) => validate_config(p)?,
        None => PipelineConfig::default(),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| {
            vec![format!(
                "{SEED_ENV}: expected a non-negative integer, found {v:?}"
            )]
        })?),
        Err(_) => None,
    };
    if let Some(s) = seed.or(env_seed) {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one command line and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();

    let cfg = match resolve_config(cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            return EXIT_INVALID;
        }
    };
    let outcome = std::panic::catch_unwind(|| commands::execute(&cli.command, &cfg));
    match outcome {
        Ok(Ok(out)) => {
            println!("{}: outputs in {}", cli.command.name(), out.display());
            EXIT_OK
        }
        Ok(Err(e)) => {
            error!("{} failed", cli.command.name());
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure in {}", cli.command.name());
            EXIT_INTERNAL
        }
    }
}
