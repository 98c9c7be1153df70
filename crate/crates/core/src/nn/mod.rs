//! Minimal dense-network toolkit: flat parameters, forward and reverse
//! passes, Adam, seeded Gaussian streams, gradient checking and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod params;
pub mod rng;

pub use adam::Adam;
pub use checkpoint::{ArrayEntry, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use mlp::{MlpSpec, MAX_WIDTH};
pub use params::{ParamVector, Segment};
pub use rng::{derive_seed, named_rng, sample_perturbation, stream_rng, Stream};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("invalid parameter layout: {0}")]
    Layout(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {0}")]
    UnknownVersion(u32),
    #[error("i/o: {0}")]
    Io(String),
}

/// A loss value with its gradient, aligned with a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl GradRecord {
    pub fn zeros(n: usize) -> Self {
        Self { loss: 0.0, grad: vec![0.0; n] }
    }

    /// Sums another record into this one.
    pub fn accumulate(&mut self, other: &GradRecord) {
        self.loss += other.loss;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
    }

    pub fn check_finite(&self) -> Result<(), NnError> {
        if self.loss.is_finite() && self.grad.iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(NnError::NonFiniteLoss)
        }
    }
}
