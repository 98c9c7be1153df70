use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PreparedScenario, ScenarioError};
use crate::dynamics::LocalNavigator;
use crate::dynamics::SolverConfig;
use crate::geom::Vec2;
use crate::nn::{named_rng, Stream};
use crate::policy::{PolicySource, PreparedPolicy};

use super::reward::travel_fraction;

/// Lifetime summary of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u64,
    pub group: u32,
    pub spawn_index: usize,
    pub spawn_pos: Vec2,
    pub goal: Vec2,
    pub spawn_step: usize,
    pub exit_step: Option<usize>,
    pub final_pos: Vec2,
    pub spawn_sd: f64,
}

/// Positions after one step: `(id, x, y, group)` per active agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub agents: Vec<(u64, f64, f64, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub records: Vec<AgentRecord>,
    /// Fraction of travel per record, same order.
    pub fractions: Vec<f64>,
    pub frames: Option<Vec<Frame>>,
    /// Steps where the projection stalled and some agents were pulled back.
    pub stalls: usize,
    pub max_active: usize,
    pub horizon: usize,
}

impl RolloutResult {
    pub fn reward(&self, alpha: f64) -> Result<f64, ScenarioError> {
        super::reward(&self.fractions, alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub record_frames: bool,
    pub solver: SolverConfig,
    /// Overrides the scenario horizon.
    pub horizon: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record_frames: false, solver: SolverConfig::default(), horizon: None }
    }
}

#[derive(Debug, Clone)]
struct Active {
    record: usize,
    pos: Vec2,
}

/// Step-by-step rollout state.
pub struct Simulator<'a> {
    prep: &'a PreparedScenario,
    policy: &'a PreparedPolicy,
    opts: SimOptions,
    rng: ChaCha8Rng,
    t: usize,
    next_id: u64,
    active: Vec<Active>,
    records: Vec<AgentRecord>,
    frames: Vec<Frame>,
    stalls: usize,
    max_active: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(prep: &'a PreparedScenario, policy: &'a PreparedPolicy, seed: u64, opts: SimOptions) -> Self {
        Self {
            prep,
            policy,
            opts,
            rng: named_rng(seed, Stream::Rollout, 0),
            t: 0,
            next_id: 0,
            active: Vec::new(),
            records: Vec::new(),
            frames: Vec::new(),
            stalls: 0,
            max_active: 0,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.opts.horizon.unwrap_or(self.prep.scenario.horizon)
    }

    pub fn records(&self) -> &[AgentRecord] {
        &self.records
    }

    /// `(record index, position)` of every active agent.
    pub fn active(&self) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        self.active.iter().map(|a| (a.record, a.pos))
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Emits agents at the spawn points that are currently clear; returns
    /// their record indices.
    pub fn seed_agents(&mut self) -> Vec<usize> {
        let sc = &self.prep.scenario;
        let open = self.t < sc.spawn_until && self.t % sc.spawn_interval == 0;
        let mut born = Vec::new();
        for (k, sp) in sc.spawns.iter().enumerate() {
            if !open {
                break;
            }
            // always draw, so stream positions do not depend on outcomes
            let jx: f64 = self.rng.random_range(-1.0..=1.0);
            let jy: f64 = self.rng.random_range(-1.0..=1.0);
            if self.active.len() >= sc.max_agents {
                continue;
            }
            let pos = sp.pos + Vec2::new(jx, jy) * sc.jitter;
            if !(sc.env.clearance(pos) >= sc.r) {
                continue;
            }
            let min_gap = 2.0 * sc.r + sc.margin;
            if self.active.iter().any(|a| a.pos.dist(pos) < min_gap) {
                continue;
            }
            let grid = &self.prep.ctx.grid;
            let (Ok(b), Ok(g)) = (grid.block_id_at(pos), grid.block_id_at(sp.goal)) else { continue };
            if b == g {
                continue;
            }
            let Ok(sd) = self.prep.routes[k].distance_from(&self.prep.ctx.vg, pos) else { continue };
            if !(sd > 0.0) {
                continue;
            }
            self.records.push(AgentRecord {
                id: self.next_id,
                group: sp.group,
                spawn_index: k,
                spawn_pos: pos,
                goal: sp.goal,
                spawn_step: self.t,
                exit_step: None,
                final_pos: pos,
                spawn_sd: sd,
            });
            self.next_id += 1;
            self.active.push(Active { record: self.records.len() - 1, pos });
            born.push(self.records.len() - 1);
        }
        self.max_active = self.max_active.max(self.active.len());
        born
    }

    /// Removes agents standing in their goal's block; returns their ids.
    pub fn delete_agents(&mut self) -> Vec<u64> {
        let grid = &self.prep.ctx.grid;
        let mut gone = Vec::new();
        let records = &mut self.records;
        let t = self.t;
        self.active.retain(|a| {
            let rec = &mut records[a.record];
            let same = matches!(
                (grid.block_id_at(a.pos), grid.block_id_at(rec.goal)),
                (Ok(x), Ok(y)) if x == y
            );
            if same {
                rec.exit_step = Some(t);
                rec.final_pos = a.pos;
                gone.push(rec.id);
            }
            !same
        });
        gone
    }

    /// One full step: spawn, despawn, query the policy, project.
    pub fn step(&mut self) -> Result<(), ScenarioError> {
        self.seed_agents();
        self.delete_agents();
        self.advance()
    }

    /// Moves the current agents by one policy query and projection.
    pub fn advance(&mut self) -> Result<(), ScenarioError> {
        let ctx = &self.prep.ctx;
        let mut desired = Vec::with_capacity(self.active.len());
        for a in &self.active {
            let k = self.records[a.record].spawn_index;
            desired.push(self.policy.velocity(ctx, &self.prep.routes[k], a.pos)?);
        }
        self.advance_with(&desired)
    }

    /// Like [`Simulator::advance`] with externally chosen desired velocities,
    /// one per active agent in [`Simulator::active`] order.
    pub fn advance_with(&mut self, desired: &[Vec2]) -> Result<(), ScenarioError> {
        if desired.len() != self.active.len() {
            return Err(ScenarioError::Invalid(format!(
                "{} desired velocities for {} agents",
                desired.len(),
                self.active.len()
            )));
        }
        let ctx = &self.prep.ctx;
        let ids: Vec<u64> = self.active.iter().map(|a| self.records[a.record].id).collect();
        let pos: Vec<Vec2> = self.active.iter().map(|a| a.pos).collect();
        let nav = LocalNavigator::new(&ctx.env, self.prep.scenario.r, self.opts.solver);
        let out = nav.step(&ids, &pos, desired)?;
        if out.stall.is_some() {
            self.stalls += 1;
        }
        for (a, p) in self.active.iter_mut().zip(out.positions) {
            a.pos = p;
            self.records[a.record].final_pos = p;
        }
        if self.opts.record_frames {
            let agents = self
                .active
                .iter()
                .map(|a| {
                    let r = &self.records[a.record];
                    (r.id, a.pos.x, a.pos.y, r.group)
                })
                .collect();
            self.frames.push(Frame { t: self.t, agents });
        }
        self.t += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<RolloutResult, ScenarioError> {
        let vg = &self.prep.ctx.vg;
        let mut fractions = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let final_sd =
                if r.exit_step.is_some() { 0.0 } else { self.prep.routes[r.spawn_index].distance_from(vg, r.final_pos)? };
            fractions.push(travel_fraction(r.exit_step.is_some(), r.spawn_sd, final_sd)?);
        }
        Ok(RolloutResult {
            records: self.records,
            fractions,
            frames: self.opts.record_frames.then_some(self.frames),
            stalls: self.stalls,
            max_active: self.max_active,
            horizon: self.t,
        })
    }
}

/// Full rollout with an already prepared policy.
pub fn simulate(
    prep: &PreparedScenario,
    policy: &PreparedPolicy,
    seed: u64,
    opts: SimOptions,
) -> Result<RolloutResult, ScenarioError> {
    let mut sim = Simulator::new(prep, policy, seed, opts);
    for _ in 0..sim.horizon() {
        sim.step()?;
    }
    sim.finish()
}

/// Prepares `source` for the scenario (one hidden-field inference for a
/// neural policy) and runs a rollout.
pub fn rollout(
    prep: &PreparedScenario,
    source: &PolicySource,
    seed: u64,
    opts: SimOptions,
) -> Result<RolloutResult, ScenarioError> {
    let policy = source.prepare(&prep.ctx)?;
    simulate(prep, &policy, seed, opts)
}
