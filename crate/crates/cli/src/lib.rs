//! `tcssl`: data generation, pretraining, fine-tuning, evaluation, retrieval
//! and pretrained-vs-baseline comparison runs.
//!
//! Every command writes a [`RunManifest`] holding its arguments and the fully
//! resolved configuration; `tcssl replay --manifest FILE` re-executes it.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tcssl_core::train::PretrainMethod;

pub mod commands;
pub mod config;
pub mod report;

use config::{Config, Preset};

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Bad or missing data, or a violated contract (exit 2).
    #[error(transparent)]
    Data(#[from] tcssl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tcssl", version, about = "Temporal-coherence pretraining experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic procedure dataset.
    Synth(SynthArgs),
    /// Pretrain an encoder on the unlabeled training splits.
    Pretrain(PretrainArgs),
    /// Fine-tune a phase model on labeled training splits.
    Finetune(FinetuneArgs),
    /// Evaluate a phase model on one split.
    Eval(EvalArgs),
    /// Run baseline and pretrained arms over several seeds.
    Compare(CompareArgs),
    /// Nearest-frame retrieval in embedding space.
    Retrieve(RetrieveArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ConfigArgs {
    /// Built-in defaults to start from.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// `key = value` file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config, CliError> {
        Config::resolve(self.preset, self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub videos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn parse_method(s: &str) -> Result<PretrainMethod, String> {
    s.parse().map_err(|e: tcssl_core::Error| e.to_string())
}

fn parse_labeled_sets(s: &str) -> Result<String, String> {
    match s {
        "A" | "AB" | "ABC" => Ok(s.to_string()),
        _ => Err("expected A, AB or ABC".into()),
    }
}

fn parse_split(s: &str) -> Result<String, String> {
    match s {
        "A" | "B" | "C" | "D" => Ok(s.to_string()),
        _ => Err("expected one of A, B, C, D".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// contrastive, ranking or contrastive2.
    #[arg(long, value_parser = parse_method)]
    pub method: PretrainMethod,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// A, AB or ABC.
    #[arg(long, value_parser = parse_labeled_sets)]
    pub labeled_sets: String,
    /// Encoder (or phase model) checkpoint whose encoder initializes the model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "D", value_parser = parse_split)]
    pub split: String,
    /// Report CSV; a `.txt` table is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Seeds 0..K.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value = "A", value_parser = parse_labeled_sets)]
    pub labeled_sets: String,
    /// Comma-separated pretraining methods.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "contrastive,ranking,contrastive2")]
    pub methods: Vec<PretrainMethod>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder or phase-model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// `SPLIT[:STRIDE]` (every STRIDE-th frame of that split) or a
    /// comma-separated list of `VIDEO_ID@FRAME`.
    #[arg(long)]
    pub queries: String,
    /// Split searched for nearest frames.
    #[arg(long, default_value = "D", value_parser = parse_split)]
    pub corpus_split: String,
    /// Result CSV; a `.txt` summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Record of one command execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Command,
    /// Every configuration key after preset, file and flag resolution.
    pub config: std::collections::BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Values derived from the configuration and data, such as the frame
    /// offsets the sampler actually used.
    pub resolved: serde_json::Value,
    pub wall_clock_seconds: f64,
}

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{} is not a run manifest: {e}", path.display())))
}

/// Runs `command`; `resolved` replaces flag/file/preset resolution when
/// replaying a manifest.
pub fn execute(command: &Command, resolved: Option<Config>) -> Result<(), CliError> {
    let config = |args: &ConfigArgs| match &resolved {
        Some(c) => Ok(c.clone()),
        None => args.resolve(),
    };
    match command {
        Command::Synth(a) => commands::synth(a, config(&a.cfg)?, command),
        Command::Pretrain(a) => commands::pretrain(a, config(&a.cfg)?, command),
        Command::Finetune(a) => commands::finetune(a, config(&a.cfg)?, command),
        Command::Eval(a) => commands::eval(a, config(&a.cfg)?, command),
        Command::Compare(a) => commands::compare(a, config(&a.cfg)?, command),
        Command::Retrieve(a) => commands::retrieve(a, config(&a.cfg)?, command),
        Command::Replay(a) => {
            let manifest = read_manifest(&a.manifest)?;
            if matches!(manifest.invocation, Command::Replay(_)) {
                return Err(CliError::Usage("cannot replay a replay".into()));
            }
            let cfg = Config::from_resolved(manifest.config)?;
            execute(&manifest.invocation, Some(cfg))
        }
    }
}
