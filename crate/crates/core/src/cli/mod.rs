//! Command-line surface: `gen`, `train`, `eval`, `replay` and `profile`.
//!
//! Settings come from an optional TOML file; flags override it, and the
//! path flags also read `TRAFFICRULES_*` environment variables. Exit codes:
//! 0 success, 1 usage, 2 data error, 3 runtime failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{load_dataset, load_policy, DatasetManifest, ProfileReport, MANIFEST_FORMAT_VERSION, PROFILE_FORMAT_VERSION};
pub use config::{Paths, RunConfig};

use crate::env::EnvError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use crate::scenario::{Preset, ScenarioError};
use crate::training::TrainingError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Policy(p) => p.into(),
            ScenarioError::Dynamics(_) | ScenarioError::EmptyRollout | ScenarioError::GenerationFailed { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Nn(n) => n.into(),
            PolicyError::ZeroSweeps => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFiniteLoss => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Scenario(s) => s.into(),
            TrainingError::Policy(p) => p.into(),
            TrainingError::Nn(n) => n.into(),
            TrainingError::Env(v) => v.into(),
            TrainingError::Config(_) | TrainingError::TooFewSamples(_) => CliError::Usage(e.to_string()),
            TrainingError::Checkpoint(_) | TrainingError::UnknownVersion(_) | TrainingError::Io(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trafficrules", version, about = "Multi-agent navigation with learned per-block traffic rules")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "TRAFFICRULES_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel rollouts.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario dataset with a manifest.
    Gen(GenArgs),
    /// Train the rule network by imitation (il) or evolution strategies (rl).
    Train(TrainArgs),
    /// Compare policies on a test set.
    Eval(EvalArgs),
    /// Record one rollout as a trace.
    Replay(ReplayArgs),
    /// Time hidden-field inference and per-step policy queries.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset size preset; overrides --count.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Index of the first scenario within the seed's stream.
    #[arg(long)]
    pub first_index: Option<u64>,
    /// Output directory.
    #[arg(long, env = "TRAFFICRULES_DATASET")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    RlTrain,
    IlTrain,
    Test,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::RlTrain => Preset::RlTrain,
            PresetArg::IlTrain => Preset::IlTrain,
            PresetArg::Test => Preset::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Il,
    Rl,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub mode: Mode,
    /// Training dataset directory.
    #[arg(long, env = "TRAFFICRULES_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Held-out dataset used for periodic probes.
    #[arg(long, env = "TRAFFICRULES_VALIDATION")]
    pub validation: Option<PathBuf>,
    /// Checkpoint written during and after training.
    #[arg(long, env = "TRAFFICRULES_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// RL iterations or IL rounds.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Training log (JSON lines); defaults to `<log_dir>/<mode>.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, env = "TRAFFICRULES_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `expert`, `baseline` or a checkpoint path; repeatable.
    #[arg(long = "policy", required = true)]
    pub policies: Vec<String>,
    #[arg(long, env = "TRAFFICRULES_TESTSET")]
    pub testset: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub policy: String,
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Trace file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// `expert`, `baseline` or a checkpoint path.
    #[arg(long, env = "TRAFFICRULES_CHECKPOINT")]
    pub policy: String,
    /// Scenario file; defaults to a generated 16 × 16 map.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,40,80,160,240")]
    pub agents: Vec<usize>,
    /// Timed steps per agent count.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Output goes to stdout, diagnostics to
/// stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
