use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LogRecord, TrainLog, TrainingError};
use crate::env::BlockGrid;
use crate::geom::Vec2;
use crate::dynamics::SolverConfig;
use crate::nn::{derive_seed, named_rng, Adam, Checkpoint, GradRecord, NnError, ParamVector, Stream};
use crate::policy::{
    clamp_backward, clamp_velocity, grnn_backward, grnn_forward_traced, grnn_infer, rfu_input, Aggregation,
    GrnnConfig, PolicyNet, PolicySource, CLAMP_EPS, HIDDEN, RFU_INPUT,
};
use crate::scenario::{metrics, PreparedScenario, SimOptions, Simulator};

/// One agent at one step: position, goal, the learner's velocity and the
/// expert label, plus the inputs the loss needs (`v̄`, block, in-block offset).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionTuple {
    pub x: Vec2,
    pub g: Vec2,
    pub pi: Vec2,
    pub pi_star: Vec2,
    pub v_bar: Vec2,
    pub block: usize,
    pub rel: Vec2,
}

impl TransitionTuple {
    /// `|π − π*|²` with the velocity recorded at collection time.
    pub fn discrepancy(&self) -> f64 {
        (self.pi - self.pi_star).norm_sq()
    }
}

/// Which controller drives the rollout while tuples are collected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    /// The current learner moves the agents; the expert only labels.
    #[default]
    OnPolicy,
    /// The expert moves the agents (plain behaviour cloning).
    Expert,
}

/// Runs one rollout of `horizon` steps and records a tuple for every active
/// agent at every step.
pub fn collect_il_dataset(
    learner: &PolicySource,
    prep: &PreparedScenario,
    horizon: usize,
    seed: u64,
    collection: Collection,
    opts: SimOptions,
) -> Result<Vec<TransitionTuple>, TrainingError> {
    let ctx = &prep.ctx;
    let learner = learner.prepare(ctx)?;
    let expert = PolicySource::Expert.prepare(ctx)?;
    let driver = match collection {
        Collection::OnPolicy => &learner,
        Collection::Expert => &expert,
    };
    let opts = SimOptions { horizon: Some(horizon), record_frames: false, ..opts };
    let mut sim = Simulator::new(prep, driver, seed, opts);
    let mut out = Vec::new();
    let mut desired = Vec::new();
    for _ in 0..horizon {
        sim.seed_agents();
        sim.delete_agents();
        desired.clear();
        for (rec, x) in sim.active() {
            let r = &sim.records()[rec];
            let v_bar = ctx.tentative(&prep.routes[r.spawn_index], x)?;
            let pi = learner.modulate(ctx, x, v_bar)?;
            let pi_star = expert.modulate(ctx, x, v_bar)?;
            let block = ctx.grid.block_id_at(x)?;
            let rel = x - ctx.grid.block_index(x)?;
            out.push(TransitionTuple { x, g: r.goal, pi, pi_star, v_bar, block, rel });
            desired.push(match collection {
                Collection::OnPolicy => pi,
                Collection::Expert => pi_star,
            });
        }
        sim.advance_with(&desired)?;
    }
    Ok(out)
}

/// `(1/|D|) Σ |π(x, g) − π*|²` under parameters `params`.
pub fn il_loss(
    net: &PolicyNet,
    params: &[f64],
    grid: &BlockGrid,
    grnn: &GrnnConfig,
    v_max: f64,
    data: &[TransitionTuple],
) -> Result<f64, TrainingError> {
    if data.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let field = grnn_infer(net, params, grid, grnn);
    let mut sum = 0.0;
    for t in data {
        let pi = crate::policy::rfu_modulate(net, params, field.state(t.block), t.rel, t.v_bar, v_max)?;
        sum += (pi - t.pi_star).norm_sq();
    }
    Ok(sum / data.len() as f64)
}

/// [`il_loss`] and its gradient, back-propagated through the clamp, the
/// rule-following unit and the unrolled hidden-state sweeps.
pub fn il_loss_grad(
    net: &PolicyNet,
    params: &[f64],
    grid: &BlockGrid,
    grnn: &GrnnConfig,
    v_max: f64,
    data: &[TransitionTuple],
) -> Result<GradRecord, TrainingError> {
    if data.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if let Some(t) = data.iter().find(|t| t.block >= grid.num_free()) {
        return Err(TrainingError::Config(format!("tuple block {} outside a {}-block grid", t.block, grid.num_free())));
    }
    if params.len() != net.param_count() {
        return Err(NnError::ShapeMismatch { what: "parameters", expected: net.param_count(), found: params.len() }.into());
    }
    let trace = grnn_forward_traced(net, params, grid, grnn);
    let hs = trace.final_states();
    let mut rec = GradRecord::zeros(params.len());
    let mut d_final = vec![0.0; hs.len()];
    let rfu_p = net.rfu_params(params);
    let rfu_range = net.rfu_range();
    let mut tr = vec![0.0; net.rfu.trace_len()];
    let mut input = [0.0; RFU_INPUT];
    let mut din = [0.0; RFU_INPUT];
    let scale = 2.0 / data.len() as f64;
    for t in data {
        let h = &hs[t.block * HIDDEN..(t.block + 1) * HIDDEN];
        rfu_input(h, t.rel, t.v_bar, &mut input);
        net.rfu.forward_traced(rfu_p, &input, &mut tr);
        let o = net.rfu.output(&tr);
        let o = Vec2::new(o[0], o[1]);
        let diff = clamp_velocity(o, v_max, CLAMP_EPS) - t.pi_star;
        rec.loss += diff.norm_sq();
        let d_o = clamp_backward(o, v_max, CLAMP_EPS, diff * scale);
        net.rfu.backward(rfu_p, &tr, &[d_o.x, d_o.y], &mut rec.grad[rfu_range.clone()], Some(&mut din));
        for (d, v) in d_final[t.block * HIDDEN..(t.block + 1) * HIDDEN].iter_mut().zip(&din[..HIDDEN]) {
            *d += v;
        }
    }
    rec.loss /= data.len() as f64;
    grnn_backward(net, params, &trace, &d_final, &mut rec.grad);
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlConfig {
    pub rounds: usize,
    /// Rollout length used for collection.
    pub horizon: usize,
    /// Adam steps per round.
    pub adam_steps: usize,
    pub lr: f64,
    /// Tuples per Adam step, drawn with replacement; 0 uses the whole round.
    pub batch_size: usize,
    pub collection: Collection,
    /// Validation probe period in rounds; 0 disables probing.
    pub probe_every: usize,
    pub probe_runs: usize,
    pub grnn: GrnnConfig,
    pub aggregation: Aggregation,
    pub solver: SolverConfig,
}

impl Default for IlConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            horizon: 500,
            adam_steps: 1000,
            lr: 1e-4,
            batch_size: 256,
            collection: Collection::OnPolicy,
            probe_every: 10,
            probe_runs: 1,
            grnn: GrnnConfig::default(),
            aggregation: Aggregation::Sum,
            solver: SolverConfig::default(),
        }
    }
}

impl IlConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.horizon == 0 || self.adam_steps == 0 || self.probe_runs == 0 {
            return Err(TrainingError::Config("horizon, adam_steps and probe_runs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainingError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.grnn.k == Some(0) {
            return Err(TrainingError::Config("GRNN needs at least one sweep".into()));
        }
        Ok(())
    }
}

/// Round-by-round imitation trainer. All randomness is derived from
/// `(seed, round)`, so a checkpoint only needs the round counter.
#[derive(Debug, Clone)]
pub struct IlTrainer {
    pub cfg: IlConfig,
    net: Arc<PolicyNet>,
    params: ParamVector,
    adam: Adam,
    round: usize,
    seed: u64,
}

impl IlTrainer {
    pub fn new(cfg: IlConfig, theta0: ParamVector, seed: u64) -> Result<Self, TrainingError> {
        cfg.validate()?;
        let net = Arc::new(PolicyNet::new(cfg.aggregation));
        net.check_params(&theta0)?;
        let adam = Adam::new(theta0.len(), cfg.lr);
        Ok(Self { cfg, net, params: theta0, adam, round: 0, seed })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn net(&self) -> &Arc<PolicyNet> {
        &self.net
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    pub fn source(&self) -> PolicySource {
        PolicySource::Neural { net: self.net.clone(), params: Arc::new(self.params.clone()), grnn: self.cfg.grnn }
    }

    /// Collects a dataset on one sampled scenario and takes the round's
    /// Adam steps on it.
    pub fn run_round(
        &mut self,
        trainset: &[PreparedScenario],
        validation: &[PreparedScenario],
        log: &mut TrainLog,
    ) -> Result<(), TrainingError> {
        if trainset.is_empty() {
            return Err(TrainingError::Config("empty training set".into()));
        }
        let r = self.round as u64;
        let idx = named_rng(self.seed, Stream::ScenarioPick, r).random_range(0..trainset.len());
        let prep = &trainset[idx];
        let seed = derive_seed(self.seed, Stream::Rollout, r);
        let opts = SimOptions { solver: self.cfg.solver, ..SimOptions::default() };
        let data = collect_il_dataset(&self.source(), prep, self.cfg.horizon, seed, self.cfg.collection, opts)?;
        let (grid, v_max) = (&prep.ctx.grid, prep.ctx.v_max);
        let loss_before = il_loss(&self.net, self.params.as_slice(), grid, &self.cfg.grnn, v_max, &data)?;
        let mut rng = named_rng(self.seed, Stream::Minibatch, r);
        let full = self.cfg.batch_size == 0 || self.cfg.batch_size >= data.len();
        let mut batch = Vec::with_capacity(if full { 0 } else { self.cfg.batch_size });
        for _ in 0..self.cfg.adam_steps {
            let rows: &[TransitionTuple] = if full {
                &data
            } else {
                batch.clear();
                batch.extend((0..self.cfg.batch_size).map(|_| data[rng.random_range(0..data.len())]));
                &batch
            };
            let rec = il_loss_grad(&self.net, self.params.as_slice(), grid, &self.cfg.grnn, v_max, rows)?;
            rec.check_finite()?;
            self.adam.step(self.params.as_mut_slice(), &rec.grad);
        }
        let loss_after = il_loss(&self.net, self.params.as_slice(), grid, &self.cfg.grnn, v_max, &data)?;
        self.round += 1;
        log.push(LogRecord::IlRound { round: self.round, scenario: idx, tuples: data.len(), loss_before, loss_after })?;
        if self.cfg.probe_every > 0 && self.round % self.cfg.probe_every == 0 && !validation.is_empty() {
            self.probe(validation, log)?;
        }
        Ok(())
    }

    /// Logs `R₀`/`R∞` of the current parameters on `validation`.
    pub fn probe(&self, validation: &[PreparedScenario], log: &mut TrainLog) -> Result<(f64, f64), TrainingError> {
        let opts = SimOptions { horizon: Some(self.cfg.horizon), solver: self.cfg.solver, ..SimOptions::default() };
        let seed = derive_seed(self.seed, Stream::Probe, 0);
        let m = metrics(&self.source(), validation, self.cfg.probe_runs, seed, opts)?;
        log.push(LogRecord::Probe { at: self.round, r0: m.r0.mean, rinf: m.rinf.mean })?;
        Ok((m.r0.mean, m.rinf.mean))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let hyper = serde_json::to_value(&self.cfg).expect("config serializes");
        let state = serde_json::json!({ "round": self.round, "adam_t": self.adam.t });
        let mut ck = Checkpoint::new("il", self.seed, &self.params, hyper, state);
        ck.push_array("adam_m", self.adam.m.clone());
        ck.push_array("adam_v", self.adam.v.clone());
        ck
    }

    /// Restores a trainer saved by [`IlTrainer::checkpoint`]; `rounds` may be
    /// raised to extend the run.
    pub fn from_checkpoint(ck: &Checkpoint, rounds: Option<usize>) -> Result<Self, TrainingError> {
        if ck.header.kind != "il" {
            return Err(TrainingError::Checkpoint(format!("expected an il checkpoint, found {}", ck.header.kind)));
        }
        let mut cfg: IlConfig = serde_json::from_value(ck.header.hyperparameters.clone())
            .map_err(|e| TrainingError::Checkpoint(e.to_string()))?;
        if let Some(n) = rounds {
            cfg.rounds = n;
        }
        let mut t = Self::new(cfg, ck.params()?, ck.header.seed)?;
        let state = &ck.header.state;
        t.round = state["round"].as_u64().ok_or_else(|| TrainingError::Checkpoint("missing round".into()))? as usize;
        t.adam.t = state["adam_t"].as_u64().ok_or_else(|| TrainingError::Checkpoint("missing adam_t".into()))?;
        t.adam.m = moments(ck, "adam_m", t.params.len())?;
        t.adam.v = moments(ck, "adam_v", t.params.len())?;
        Ok(t)
    }
}

pub(super) fn moments(ck: &Checkpoint, name: &str, len: usize) -> Result<Vec<f64>, TrainingError> {
    let a = ck.array(name).ok_or_else(|| TrainingError::Checkpoint(format!("missing {name}")))?;
    if a.len() != len {
        return Err(TrainingError::DimensionMismatch { expected: len, found: a.len() });
    }
    Ok(a.to_vec())
}

/// Runs `cfg.rounds` rounds from `theta0` and returns the final parameters.
pub fn train_il(
    cfg: IlConfig,
    trainset: &[PreparedScenario],
    theta0: ParamVector,
    seed: u64,
    validation: &[PreparedScenario],
    log: &mut TrainLog,
) -> Result<ParamVector, TrainingError> {
    let mut t = IlTrainer::new(cfg, theta0, seed)?;
    while !t.is_done() {
        t.run_round(trainset, validation, log)?;
    }
    Ok(t.params)
}
