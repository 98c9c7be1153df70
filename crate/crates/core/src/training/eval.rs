use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::policy::PolicySource;
use crate::scenario::{metrics, MetricsReport, PreparedScenario, SimOptions};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Side-by-side `R₀`/`R∞` of several policies on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub seed: u64,
    pub runs: usize,
    pub scenarios: usize,
    pub horizon: Option<usize>,
    pub policies: Vec<MetricsReport>,
}

impl EvalReport {
    /// Fixed-width `mean ± std` table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>18} {:>18}", "policy", "R0", "Rinf");
        for p in &self.policies {
            let r0 = format!("{:.2} ± {:.2}", p.r0.mean, p.r0.std);
            let ri = format!("{:.2} ± {:.2}", p.rinf.mean, p.rinf.std);
            let _ = writeln!(s, "{:<12} {:>18} {:>18}", p.policy, r0, ri);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TrainingError> {
        let raw: serde_json::Value = serde_json::from_str(s).map_err(|e| TrainingError::Io(e.to_string()))?;
        let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != REPORT_FORMAT_VERSION as u64 {
            return Err(TrainingError::UnknownVersion(version));
        }
        serde_json::from_value(raw).map_err(|e| TrainingError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, self.to_json()).map_err(|e| TrainingError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        let s = std::fs::read_to_string(path).map_err(|e| TrainingError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// Evaluates each `(label, policy)` on `testset` with the same run seeds.
pub fn evaluate(
    policies: &[(String, PolicySource)],
    testset: &[PreparedScenario],
    runs: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<EvalReport, TrainingError> {
    let mut out = Vec::with_capacity(policies.len());
    for (label, source) in policies {
        let mut m = metrics(source, testset, runs, seed, opts)?;
        m.policy = label.clone();
        out.push(m);
    }
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        seed,
        runs,
        scenarios: testset.len(),
        horizon: opts.horizon,
        policies: out,
    })
}
