//! Imitation of the rulebook expert and evolution-strategies training of the
//! rule network, plus policy comparison reports.

mod es;
mod eval;
mod il;
mod log;
mod rl;

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use crate::scenario::ScenarioError;

pub use es::{es_gradient, es_gradient_mirrored, shaped_utilities, shaped_utilities_with, Estimator, TieBreak};
pub use eval::{evaluate, EvalReport, REPORT_FORMAT_VERSION};
pub use il::{collect_il_dataset, il_loss, il_loss_grad, train_il, Collection, IlConfig, IlTrainer, TransitionTuple};
pub use log::{LogRecord, TrainLog};
pub use rl::{train_rl, AlphaDirection, RlConfig, RlTrainer};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("perturbation length {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("unknown report format version {0}")]
    UnknownVersion(u64),
    #[error("checkpoint does not match this trainer: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[cfg(test)]
mod tests;
