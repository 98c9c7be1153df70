use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainingError;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    IlRound {
        round: usize,
        scenario: usize,
        tuples: usize,
        /// Mean discrepancy on this round's data before and after its updates.
        loss_before: f64,
        loss_after: f64,
    },
    RlIteration {
        iteration: usize,
        scenario: usize,
        alpha: f64,
        eta: f64,
        rewards: Vec<f64>,
        step_norm: f64,
        /// The update was rejected because it produced non-finite parameters.
        skipped: bool,
    },
    Probe {
        /// Round or iteration count at the time of the probe.
        at: usize,
        r0: f64,
        rinf: f64,
    },
}

/// Append-only record list, optionally mirrored to a JSONL writer.
#[derive(Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self { records: Vec::new(), sink: Some(sink) }
    }

    pub fn push(&mut self, rec: LogRecord) -> Result<(), TrainingError> {
        if let Some(w) = self.sink.as_mut() {
            let line = serde_json::to_string(&rec).expect("log record serializes");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| TrainingError::Io(e.to_string()))?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn probes(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Probe { at, r0, rinf } => Some((*at, *r0, *rinf)),
            _ => None,
        })
    }
}

impl std::fmt::Debug for TrainLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainLog").field("records", &self.records.len()).finish()
    }
}
