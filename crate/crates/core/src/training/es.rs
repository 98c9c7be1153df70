use serde::{Deserialize, Serialize};

use super::TrainingError;

/// How equal rewards are ranked before shaping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lower sample index ranks first.
    #[default]
    Index,
    /// Tied samples share the mean utility of the ranks they span.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Shaped(TieBreak),
    /// Raw rewards, `(1/(nσ)) Σ R_k ε_k`.
    Unshaped,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Shaped(TieBreak::Index)
    }
}

/// Rank-based fitness shaping with index tie-breaking.
pub fn shaped_utilities(rewards: &[f64]) -> Result<Vec<f64>, TrainingError> {
    shaped_utilities_with(rewards, TieBreak::Index)
}

/// `u[k]` is the utility of the sample at position `k` of `rewards`. Samples
/// are ranked by descending reward and rank `i` (1-based) receives
/// `max(0, ln(n/2 + 1) − ln i) / Σⱼ max(0, ln(n/2 + 1) − ln j) − 1/n`.
pub fn shaped_utilities_with(rewards: &[f64], ties: TieBreak) -> Result<Vec<f64>, TrainingError> {
    let n = rewards.len();
    if n < 2 {
        return Err(TrainingError::TooFewSamples(n));
    }
    let top = (n as f64 / 2.0 + 1.0).ln();
    let raw: Vec<f64> = (1..=n).map(|i| (top - (i as f64).ln()).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let profile: Vec<f64> = raw.iter().map(|r| r / total - 1.0 / n as f64).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    let mut u = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        if ties == TieBreak::Average {
            while end < n && rewards[order[end]] == rewards[order[start]] {
                end += 1;
            }
        }
        let mean = profile[start..end].iter().sum::<f64>() / (end - start) as f64;
        for &k in &order[start..end] {
            u[k] = if end - start == 1 { profile[start] } else { mean };
        }
        start = end;
    }
    Ok(u)
}

fn weights(rewards: &[f64], sigma: f64, estimator: Estimator) -> Result<Vec<f64>, TrainingError> {
    let n = rewards.len();
    if n < 2 {
        return Err(TrainingError::TooFewSamples(n));
    }
    if !(sigma > 0.0) {
        return Err(TrainingError::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(match estimator {
        Estimator::Shaped(ties) => shaped_utilities_with(rewards, ties)?.into_iter().map(|u| u / sigma).collect(),
        Estimator::Unshaped => rewards.iter().map(|r| r / (n as f64 * sigma)).collect(),
    })
}

fn check_dims<'e>(eps: impl Iterator<Item = &'e [f64]>, dim: usize) -> Result<(), TrainingError> {
    for e in eps {
        if e.len() != dim {
            return Err(TrainingError::DimensionMismatch { expected: dim, found: e.len() });
        }
    }
    Ok(())
}

/// Search-gradient estimate `(1/σ) Σ u_k ε_k` from `(reward, ε)` pairs.
pub fn es_gradient(pairs: &[(f64, &[f64])], sigma: f64, estimator: Estimator) -> Result<Vec<f64>, TrainingError> {
    let rewards: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let w = weights(&rewards, sigma, estimator)?;
    let dim = pairs[0].1.len();
    check_dims(pairs.iter().map(|p| p.1), dim)?;
    let mut g = vec![0.0; dim];
    for (wk, (_, eps)) in w.iter().zip(pairs) {
        for (gi, e) in g.iter_mut().zip(eps.iter()) {
            *gi += wk * e;
        }
    }
    Ok(g)
}

/// Antithetic form of [`es_gradient`]: sample `p` of `eps` was evaluated at
/// `+ε` with reward `plus[p]` and at `−ε` with reward `minus[p]`. Each pair
/// contributes `(w⁺ − w⁻) ε`, so pairs whose weights coincide cancel exactly.
pub fn es_gradient_mirrored(
    plus: &[f64],
    minus: &[f64],
    eps: &[&[f64]],
    sigma: f64,
    estimator: Estimator,
) -> Result<Vec<f64>, TrainingError> {
    if plus.len() != minus.len() || plus.len() != eps.len() {
        return Err(TrainingError::Config("mirrored estimator needs one reward pair per perturbation".into()));
    }
    let rewards: Vec<f64> = plus.iter().chain(minus).copied().collect();
    let w = weights(&rewards, sigma, estimator)?;
    let dim = eps[0].len();
    check_dims(eps.iter().copied(), dim)?;
    let half = plus.len();
    let mut g = vec![0.0; dim];
    for (p, e) in eps.iter().enumerate() {
        let d = w[p] - w[p + half];
        if d == 0.0 {
            continue;
        }
        for (gi, ei) in g.iter_mut().zip(e.iter()) {
            *gi += d * ei;
        }
    }
    Ok(g)
}
