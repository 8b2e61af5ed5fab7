mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "tailgraft", version, about = "Long-tail demonstration dataset toolkit")]
struct Cli {
    /// JSON config; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth phase boundaries.
    Synth(SynthArgs),
    /// Sub-sample a full dataset into a long-tailed one.
    BuildLt(BuildLtArgs),
    /// Mark head and tail tasks by demonstration count.
    Partition(PartitionArgs),
    /// Emit a class-balanced re-sampling schedule.
    Resample(ResampleArgs),
    /// Split trajectories into approach and execution phases.
    Segment(SegmentArgs),
    /// Phase-wise failure statistics and relative risk from rollout logs.
    Analyze(AnalyzeArgs),
    /// Graft tail objects into head approach segments and build the co-training set.
    Augment(AugmentArgs),
    /// Submit pending grafts to a render service and fold results back.
    RenderBridge(RenderBridgeArgs),
    /// Success-rate table and chart from rollout logs.
    Report(ReportArgs),
    /// Validate a dataset directory.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthArgs {
    /// Dataset layout JSON (tasks, counts, scenario ranges).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in layout: libero-core-full or real-world.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildLtArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Bundled profile name or path to a profile JSON.
    #[arg(long)]
    pub profile: Option<String>,
    /// Comma-separated task ids by rank; defaults to the profile's order.
    #[arg(long)]
    pub order: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fraction of tasks, by count, that form the head.
    #[arg(long)]
    pub head_fraction: Option<f64>,
    /// Output directory; the input manifest is rewritten when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Exponent in [0, 1] or a preset (q075, q050, q025).
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated fallback chain of annotated, gripper, proximity.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub close_threshold: Option<f64>,
    #[arg(long)]
    pub min_hold: Option<usize>,
    /// Gripper signal: action or proprio.
    #[arg(long)]
    pub signal: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeArgs {
    /// Rollout logs of the full-data and long-tail runs, in that order.
    #[arg(long, num_args = 2, value_names = ["FULL", "LT"])]
    pub rollouts: Option<Vec<PathBuf>>,
    /// 1-based rank range M:N of the tail tasks.
    #[arg(long)]
    pub tail_range: Option<String>,
    /// pooled or per-seed.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated task ids by rank; defaults to first appearance in the full log.
    #[arg(long)]
    pub task_order: Option<String>,
    /// Comma-separated subset of csv, json, svg.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentArgs {
    /// Partitioned long-tail dataset.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// splits.json from `segment`.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub per_task: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub formatting: Option<Switch>,
    #[arg(long, value_enum)]
    pub augmentation: Option<Switch>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeAction {
    Submit,
    Poll,
    Reconcile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    File,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Render,
    Edit,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderBridgeArgs {
    #[arg(value_enum)]
    pub action: Option<BridgeAction>,
    /// Augmented dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<BridgeMode>,
    #[arg(long, value_enum)]
    pub kind: Option<RequestKind>,
    /// Service base URL for http mode.
    #[arg(long, env = "TAILGRAFT_RENDER_ENDPOINT")]
    pub endpoint: Option<String>,
    /// JSON file passed through as the camera spec of render requests.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Work directory for ledger, outbox, inbox and quarantine; defaults to `<dataset>/render`.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(long)]
    pub attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportArgs {
    /// Rollout logs as LABEL=PATH (or PATH, labelled by file stem).
    #[arg(long, num_args = 1..)]
    pub rollouts: Option<Vec<String>>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain { code: &'static str, message: String },
}

impl From<tailgraft::Error> for CliError {
    fn from(e: tailgraft::Error) -> Self {
        CliError::Domain { code: e.code(), message: e.to_string() }
    }
}

macro_rules! domain_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                tailgraft::Error::from(e).into()
            }
        }
    )*};
}

domain_errors!(
    tailgraft::dataio::DataError,
    tailgraft::ltbench::BenchError,
    tailgraft::resampler::ResampleError,
    tailgraft::phaseseg::SegmentError,
    tailgraft::analytics::AnalyticsError,
    tailgraft::apa::ApaError,
    tailgraft::renderbridge::BridgeError,
    tailgraft::synthgen::SynthError
);

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| {
            let line = json!({
                "level": record.level().as_str().to_lowercase(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("TAILGRAFT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("TAILGRAFT_THREADS={v:?} is not a thread count")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = config::load(cli.config.as_deref())?;
    let cfg = cfg.as_ref();
    match cli.command {
        Command::Synth(a) => commands::synth(config::resolve("synth", &a, cfg)?),
        Command::BuildLt(a) => commands::build_lt(config::resolve("build-lt", &a, cfg)?),
        Command::Partition(a) => commands::partition(config::resolve("partition", &a, cfg)?),
        Command::Resample(a) => commands::resample(config::resolve("resample", &a, cfg)?),
        Command::Segment(a) => commands::segment(config::resolve("segment", &a, cfg)?),
        Command::Analyze(a) => commands::analyze(config::resolve("analyze", &a, cfg)?),
        Command::Augment(a) => commands::augment(config::resolve("augment", &a, cfg)?),
        Command::RenderBridge(a) => commands::render_bridge(config::resolve("render-bridge", &a, cfg)?),
        Command::Report(a) => commands::report(config::resolve("report", &a, cfg)?),
        Command::Validate(a) => commands::validate(config::resolve("validate", &a, cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain { code, message }) => {
            eprintln!("{}", json!({ "error": { "code": code, "message": message } }));
            ExitCode::from(1)
        }
    }
}
