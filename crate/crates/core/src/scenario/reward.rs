use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate, AgentRecord, PreparedScenario, ScenarioError, SimOptions};
use crate::env::VisibilityGraph;
use crate::nn::{derive_seed, Stream};
use crate::policy::PolicySource;

/// `F` from shortest distances: 1 for agents that reached their goal block,
/// otherwise `1 − SD(x^T, g) / SD(x⁰, g)` clipped to `[0, 1]`.
pub fn travel_fraction(exited: bool, spawn_sd: f64, final_sd: f64) -> Result<f64, ScenarioError> {
    if !(spawn_sd > 0.0) {
        return Err(ScenarioError::DegenerateSpawn);
    }
    if exited {
        return Ok(1.0);
    }
    Ok((1.0 - final_sd / spawn_sd).clamp(0.0, 1.0))
}

pub fn fraction_of_travel(record: &AgentRecord, vg: &VisibilityGraph) -> Result<f64, ScenarioError> {
    if record.exit_step.is_some() {
        return travel_fraction(true, record.spawn_sd, 0.0);
    }
    let sd = vg.shortest_distance(record.final_pos, record.goal)?;
    travel_fraction(false, record.spawn_sd, sd)
}

/// Soft-min `Σ F e^{−αF} / Σ e^{−αF}`; `α = ∞` is the exact minimum.
pub fn reward(fractions: &[f64], alpha: f64) -> Result<f64, ScenarioError> {
    if fractions.is_empty() {
        return Err(ScenarioError::EmptyRollout);
    }
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    if alpha == f64::INFINITY {
        return Ok(min);
    }
    if alpha == 0.0 {
        return Ok(fractions.iter().sum::<f64>() / fractions.len() as f64);
    }
    // shift by the minimum so the largest weight is exactly 1
    let (mut num, mut den) = (0.0, 0.0);
    for &f in fractions {
        let w = (-alpha * (f - min)).exp();
        num += f * w;
        den += w;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub r0: f64,
    pub rinf: f64,
}

/// `R₀` and `R∞` on the 0–100 scale, over repeated runs of a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub scenarios: usize,
    pub runs: usize,
    pub seed: u64,
    pub r0: Stat,
    pub rinf: Stat,
    pub per_run: Vec<RunMetrics>,
}

/// Runs every scenario `runs` times with distinct seeds. Each run's `R₀` is
/// the mean over scenarios of the α = 0 reward, `R∞` likewise with α = ∞.
pub fn metrics(
    source: &PolicySource,
    testset: &[PreparedScenario],
    runs: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<MetricsReport, ScenarioError> {
    if testset.is_empty() || runs == 0 {
        return Err(ScenarioError::Invalid("metrics need at least one scenario and one run".into()));
    }
    let prepared = testset.iter().map(|p| source.prepare(&p.ctx)).collect::<Result<Vec<_>, _>>()?;
    let n = testset.len();
    let jobs: Vec<(usize, usize)> = (0..runs).flat_map(|k| (0..n).map(move |i| (k, i))).collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let s = derive_seed(seed, Stream::Evaluate, (k * n + i) as u64);
            let res = simulate(&testset[i], &prepared[i], s, opts)?;
            Ok((res.reward(0.0)?, res.reward(f64::INFINITY)?))
        })
        .collect::<Result<_, ScenarioError>>()?;
    let per_run: Vec<RunMetrics> = results
        .chunks(n)
        .map(|c| RunMetrics {
            r0: 100.0 * c.iter().map(|x| x.0).sum::<f64>() / n as f64,
            rinf: 100.0 * c.iter().map(|x| x.1).sum::<f64>() / n as f64,
        })
        .collect();
    let r0: Vec<f64> = per_run.iter().map(|m| m.r0).collect();
    let rinf: Vec<f64> = per_run.iter().map(|m| m.rinf).collect();
    Ok(MetricsReport {
        policy: source.name().to_string(),
        scenarios: n,
        runs,
        seed,
        r0: Stat::of(&r0),
        rinf: Stat::of(&rinf),
        per_run,
    })
}
