//! Command-line front end for amodal completion, curation, dataset building
//! and evaluation.

use std::fmt;
use std::path::PathBuf;

use amodal_core::pipeline::RunError;
use amodal_core::{BackendError, CleanBackground, Error};
use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_QUERY: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;
pub const EXIT_CONTRACT: i32 = 5;

/// Bad invocation: missing inputs, unknown names, invalid settings.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::QueryResolution(_) => EXIT_QUERY,
        Error::Backend(BackendError::Transport(_)) => EXIT_TRANSPORT,
        Error::Backend(BackendError::Contract(_)) => EXIT_CONTRACT,
        Error::Config(_) | Error::InvalidLayer(_) | Error::TimestepOrder { .. } => EXIT_USAGE,
        _ => EXIT_OTHER,
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(r) = cause.downcast_ref::<RunError>() {
            return core_exit_code(&r.source);
        }
        if let Some(c) = cause.downcast_ref::<Error>() {
            return core_exit_code(c);
        }
    }
    EXIT_OTHER
}

#[derive(Debug, Parser)]
#[command(name = "amodal", version, about = "Amodal completion of occluded objects")]
pub struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON config file: {"pipeline": {...}, "backends": {...}}.
    #[arg(long, global = true, env = "AMODAL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for batch work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Complete one occluded object.
    Complete(CompleteArgs),
    /// Judge whether completions are whole.
    Curate(CurateArgs),
    /// Build pseudo-occlusion datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Score a method on a pseudo-occlusion dataset.
    Eval(EvalArgs),
    /// Inspect or serve model backends.
    #[command(subcommand)]
    Backends(BackendsCommand),
    /// Mock scene helpers.
    #[command(subcommand)]
    Scene(SceneCommand),
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Backend for every model role: mock, mock:<scene.json>, preset:<name> or a URL.
    #[arg(long)]
    pub backend: Option<String>,
    /// Backend for perceptual metrics.
    #[arg(long)]
    pub metric_backend: Option<String>,
    /// Scene for a plain `mock` backend: a scene file or preset:<name>.
    #[arg(long)]
    pub scene: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Composite timestep.
    #[arg(long)]
    pub k: Option<u32>,
    /// Decoder layer (1-4) used for clustering.
    #[arg(long)]
    pub layer: Option<u32>,
    /// Clean backdrop: gray, white, black, forest, sky or original.
    #[arg(long, value_parser = parse_background)]
    pub background: Option<CleanBackground>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
}

fn parse_background(s: &str) -> Result<CleanBackground, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_point(s: &str) -> Result<(u32, u32), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    Ok((
        x.trim().parse().map_err(|_| "bad X")?,
        y.trim().parse().map_err(|_| "bad Y")?,
    ))
}

#[derive(Debug, Clone, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Category of the object to complete.
    #[arg(long)]
    pub query: String,
    /// Pixel on the object, to pick among several of the same category.
    #[arg(long, value_parser = parse_point)]
    pub point: Option<(u32, u32)>,
    /// mc, plain or naive.
    #[arg(long, default_value = "mc")]
    pub sampler: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent completions with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub variants: u32,
    /// Also write per-iteration intermediates of the sampler.
    #[arg(long)]
    pub debug_trace: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CurateArgs {
    /// One completion bundle.
    #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
    pub bundle: Option<PathBuf>,
    /// A directory of bundles, or one holding batch.json.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// JSON object mapping item id to true/"complete" or false/"incomplete".
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Category, when a bundle does not record one.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the verdict JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Paste pool objects over each other to make occluded samples.
    Build(DatasetBuildArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DatasetBuildArgs {
    /// Directory holding pool.json.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub easy: usize,
    #[arg(long, default_value_t = 0)]
    pub hard: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object: category -> occluder categories by co-occurrence.
    #[arg(long)]
    pub cooccurrence: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 0.3)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub scale_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// mc, plain, naive or external:<dir of bundles>.
    #[arg(long, default_value = "mc")]
    pub sampler: String,
    /// Comma list; `external` stands for every perceptual metric.
    #[arg(long, default_value = "iou,l1,psnr,external")]
    pub metrics: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON; a CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Subcommand)]
pub enum BackendsCommand {
    /// Ping every configured backend and print its version.
    Check(BackendArgs),
    /// Serve a mock scene over the remote wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Scene file or preset:<name>.
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub addr: String,
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Write a preset scene and its photo to a directory.
    Init {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the preset scenes.
    List,
}

/// Runs a parsed command line with the given environment lookup.
pub fn run(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> anyhow::Result<()> {
    commands::dispatch(cli, env)
}
