use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{es_gradient, es_gradient_mirrored, Estimator, LogRecord, TieBreak, TrainLog, TrainingError};
use crate::dynamics::SolverConfig;
use crate::nn::{derive_seed, named_rng, sample_perturbation, Checkpoint, ParamVector, Stream};
use crate::policy::{Aggregation, GrnnConfig, PolicyNet, PolicySource};
use crate::scenario::{metrics, rollout, PreparedScenario, SimOptions};

/// Largest `|α|` the curriculum reaches.
const ALPHA_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaDirection {
    /// Toward the worst-case reward.
    #[default]
    Increase,
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub iterations: usize,
    pub horizon: usize,
    pub sigma: f64,
    /// Perturbations per iteration.
    pub batch: usize,
    pub alpha0: f64,
    pub alpha_step: f64,
    pub alpha_every: usize,
    pub alpha_direction: AlphaDirection,
    pub eta: f64,
    pub eta_late: f64,
    /// First iteration that uses `eta_late`.
    pub eta_switch: usize,
    /// Evaluate `+ε` and `−ε` for `batch / 2` perturbations.
    pub mirrored: bool,
    pub shaped: bool,
    /// Validation probe period in iterations; 0 disables probing.
    pub probe_every: usize,
    pub probe_runs: usize,
    pub grnn: GrnnConfig,
    pub aggregation: Aggregation,
    pub solver: SolverConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            horizon: 500,
            sigma: 0.02,
            batch: 10,
            alpha0: 0.0,
            alpha_step: 0.01,
            alpha_every: 2000,
            alpha_direction: AlphaDirection::Increase,
            eta: 2e-4,
            eta_late: 2e-5,
            eta_switch: 5000,
            mirrored: false,
            shaped: true,
            probe_every: 500,
            probe_runs: 1,
            grnn: GrnnConfig::default(),
            aggregation: Aggregation::Sum,
            solver: SolverConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.sigma > 0.0) {
            return Err(TrainingError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.batch < 2 {
            return Err(TrainingError::TooFewSamples(self.batch));
        }
        if self.mirrored && self.batch % 2 != 0 {
            return Err(TrainingError::Config("mirrored sampling needs an even batch".into()));
        }
        if self.horizon == 0 || self.alpha_every == 0 || self.probe_runs == 0 {
            return Err(TrainingError::Config("horizon, alpha_every and probe_runs must be positive".into()));
        }
        if !(self.eta >= 0.0 && self.eta_late >= 0.0) {
            return Err(TrainingError::Config("step sizes must be non-negative".into()));
        }
        if self.grnn.k == Some(0) {
            return Err(TrainingError::Config("GRNN needs at least one sweep".into()));
        }
        Ok(())
    }

    /// Soft-min temperature used at iteration `it`.
    pub fn alpha_at(&self, it: usize) -> f64 {
        let sign = match self.alpha_direction {
            AlphaDirection::Increase => 1.0,
            AlphaDirection::Decrease => -1.0,
        };
        (self.alpha0 + sign * self.alpha_step * (it / self.alpha_every) as f64).clamp(-ALPHA_CAP, ALPHA_CAP)
    }

    pub fn eta_at(&self, it: usize) -> f64 {
        if it < self.eta_switch {
            self.eta
        } else {
            self.eta_late
        }
    }

    fn estimator(&self) -> Estimator {
        match (self.shaped, self.mirrored) {
            (false, _) => Estimator::Unshaped,
            // equal rewards of a mirrored pair must cancel
            (true, true) => Estimator::Shaped(TieBreak::Average),
            (true, false) => Estimator::Shaped(TieBreak::Index),
        }
    }
}

/// Evolution-strategies trainer. Iteration `i` draws its scenario, rollout
/// seed and perturbations from streams indexed by `i`, so a checkpoint only
/// needs the iteration counter.
#[derive(Debug, Clone)]
pub struct RlTrainer {
    pub cfg: RlConfig,
    net: Arc<PolicyNet>,
    params: ParamVector,
    iteration: usize,
    seed: u64,
}

impl RlTrainer {
    pub fn new(cfg: RlConfig, theta0: ParamVector, seed: u64) -> Result<Self, TrainingError> {
        cfg.validate()?;
        let net = Arc::new(PolicyNet::new(cfg.aggregation));
        net.check_params(&theta0)?;
        Ok(Self { cfg, net, params: theta0, iteration: 0, seed })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    fn source_for(&self, params: ParamVector) -> PolicySource {
        PolicySource::Neural { net: self.net.clone(), params: Arc::new(params), grnn: self.cfg.grnn }
    }

    pub fn source(&self) -> PolicySource {
        self.source_for(self.params.clone())
    }

    fn opts(&self) -> SimOptions {
        SimOptions { horizon: Some(self.cfg.horizon), solver: self.cfg.solver, ..SimOptions::default() }
    }

    /// One iteration: `B` perturbed rollouts on one sampled scenario with a
    /// shared rollout seed, then `θ ← θ + η ĝ`.
    pub fn step(
        &mut self,
        trainset: &[PreparedScenario],
        validation: &[PreparedScenario],
        log: &mut TrainLog,
    ) -> Result<(), TrainingError> {
        if trainset.is_empty() {
            return Err(TrainingError::Config("empty training set".into()));
        }
        if self.iteration == 0 && self.cfg.probe_every > 0 && !validation.is_empty() {
            self.probe(validation, log)?;
        }
        let it = self.iteration;
        let idx = named_rng(self.seed, Stream::ScenarioPick, it as u64).random_range(0..trainset.len());
        let prep = &trainset[idx];
        let rollout_seed = derive_seed(self.seed, Stream::Rollout, it as u64);
        let (alpha, eta) = (self.cfg.alpha_at(it), self.cfg.eta_at(it));
        let b = self.cfg.batch;
        let drawn = if self.cfg.mirrored { b / 2 } else { b };
        let dim = self.params.len();
        let eps: Vec<Vec<f64>> = (0..drawn)
            .map(|k| sample_perturbation(self.seed, Stream::Perturbation.id((it * b + k) as u64), dim))
            .collect();
        let signs: &[f64] = if self.cfg.mirrored { &[1.0, -1.0] } else { &[1.0] };
        let jobs: Vec<(f64, usize)> = signs.iter().flat_map(|&s| (0..drawn).map(move |k| (s, k))).collect();
        let opts = self.opts();
        let rewards: Vec<f64> = jobs
            .par_iter()
            .map(|&(s, k)| {
                let mut p = self.params.clone();
                for (pi, e) in p.as_mut_slice().iter_mut().zip(&eps[k]) {
                    *pi += s * self.cfg.sigma * e;
                }
                let res = rollout(prep, &self.source_for(p), rollout_seed, opts)?;
                Ok(res.reward(alpha)?)
            })
            .collect::<Result<_, TrainingError>>()?;
        let estimator = self.cfg.estimator();
        let grad = if self.cfg.mirrored {
            let views: Vec<&[f64]> = eps.iter().map(Vec::as_slice).collect();
            es_gradient_mirrored(&rewards[..drawn], &rewards[drawn..], &views, self.cfg.sigma, estimator)?
        } else {
            let pairs: Vec<(f64, &[f64])> = rewards.iter().zip(&eps).map(|(&r, e)| (r, e.as_slice())).collect();
            es_gradient(&pairs, self.cfg.sigma, estimator)?
        };
        let next: Vec<f64> = self.params.as_slice().iter().zip(&grad).map(|(p, g)| p + eta * g).collect();
        let skipped = !next.iter().all(|v| v.is_finite());
        let step_norm = if skipped { 0.0 } else { eta * grad.iter().map(|g| g * g).sum::<f64>().sqrt() };
        if !skipped {
            self.params.as_mut_slice().copy_from_slice(&next);
        }
        self.iteration += 1;
        log.push(LogRecord::RlIteration { iteration: self.iteration, scenario: idx, alpha, eta, rewards, step_norm, skipped })?;
        let due = self.cfg.probe_every > 0 && (self.iteration % self.cfg.probe_every == 0 || self.is_done());
        if due && !validation.is_empty() {
            self.probe(validation, log)?;
        }
        Ok(())
    }

    /// Logs `R₀`/`R∞` of the current parameters on `validation`, always with
    /// the same evaluation seeds so probes are comparable.
    pub fn probe(&self, validation: &[PreparedScenario], log: &mut TrainLog) -> Result<(f64, f64), TrainingError> {
        let seed = derive_seed(self.seed, Stream::Probe, 0);
        let m = metrics(&self.source(), validation, self.cfg.probe_runs, seed, self.opts())?;
        log.push(LogRecord::Probe { at: self.iteration, r0: m.r0.mean, rinf: m.rinf.mean })?;
        Ok((m.r0.mean, m.rinf.mean))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let hyper = serde_json::to_value(&self.cfg).expect("config serializes");
        let state = serde_json::json!({ "iteration": self.iteration });
        Checkpoint::new("rl", self.seed, &self.params, hyper, state)
    }

    /// Restores a trainer saved by [`RlTrainer::checkpoint`]; `iterations`
    /// may be raised to extend the run.
    pub fn from_checkpoint(ck: &Checkpoint, iterations: Option<usize>) -> Result<Self, TrainingError> {
        if ck.header.kind != "rl" {
            return Err(TrainingError::Checkpoint(format!("expected an rl checkpoint, found {}", ck.header.kind)));
        }
        let mut cfg: RlConfig = serde_json::from_value(ck.header.hyperparameters.clone())
            .map_err(|e| TrainingError::Checkpoint(e.to_string()))?;
        if let Some(n) = iterations {
            cfg.iterations = n;
        }
        let mut t = Self::new(cfg, ck.params()?, ck.header.seed)?;
        t.iteration = ck.header.state["iteration"]
            .as_u64()
            .ok_or_else(|| TrainingError::Checkpoint("missing iteration".into()))? as usize;
        Ok(t)
    }
}

/// Runs `cfg.iterations` iterations from `theta0`.
pub fn train_rl(
    cfg: RlConfig,
    trainset: &[PreparedScenario],
    theta0: ParamVector,
    seed: u64,
    validation: &[PreparedScenario],
    log: &mut TrainLog,
) -> Result<ParamVector, TrainingError> {
    let mut t = RlTrainer::new(cfg, theta0, seed)?;
    while !t.is_done() {
        t.step(trainset, validation, log)?;
    }
    Ok(t.params)
}

