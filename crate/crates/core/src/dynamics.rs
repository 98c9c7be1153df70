//! Collision-constrained stepping of agents toward their desired velocities.
//!
//! Each step approximately solves
//! `min Σ‖x'ᵢ − xᵢ − vᵢ‖²` subject to pairwise separation `2r` and obstacle
//! clearance `r` at `substeps` equally spaced interpolation fractions, by
//! sequential symmetric projection of the end positions.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::geom::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub substeps: usize,
    pub projection_sweeps: usize,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { substeps: 4, projection_sweeps: 16, tolerance: 1e-4 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("need at least two active agents, found {0}")]
    TooFewAgents(usize),
    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite desired velocity for agent {0}")]
    NonFinite(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: u64,
    pub pos: Vec2,
    pub goal: Vec2,
    pub spawn_pos: Vec2,
    /// Shortest distance from spawn to goal.
    pub spawn_sd: f64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub t: usize,
    pub agents: Vec<AgentState>,
    pub env: Arc<Environment>,
    pub r: f64,
}

/// Residual infeasibility after the projection sweeps. The returned
/// positions are still feasible: the listed agents were pulled back toward
/// their previous positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverStall {
    pub reverted: Vec<u64>,
    /// Agents whose constraints could not be met even at their previous
    /// position (the input state itself was infeasible).
    pub residual: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// New positions, aligned with the input order.
    pub positions: Vec<Vec2>,
    pub stall: Option<SolverStall>,
}

/// Uniform hash grid for near-neighbor pair queries.
#[derive(Debug)]
pub struct HashGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl HashGrid {
    pub fn new(cell: f64, points: &[Vec2]) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (k, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, *p)).or_default().push(k);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: Vec2) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// All index pairs `(a, b)`, `a < b`, lying in adjacent cells, sorted.
    pub fn candidate_pairs(&self, points: &[Vec2]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, p) in points.iter().enumerate() {
            let (cx, cy) = Self::key(self.cell, *p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(list) = self.buckets.get(&(cx + dx, cy + dy)) {
                        out.extend(list.iter().filter(|&&b| b > a).map(|&b| (a, b)));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Minimum pairwise distance over active agents.
pub fn min_separation(world: &WorldState) -> Result<f64, DynamicsError> {
    let pts: Vec<Vec2> = world.agents.iter().filter(|a| a.active).map(|a| a.pos).collect();
    if pts.len() < 2 {
        return Err(DynamicsError::TooFewAgents(pts.len()));
    }
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.min(pts[i].dist(pts[j]));
        }
    }
    Ok(best)
}

/// Sum of squared deviations from the desired displacement.
pub fn step_objective(prev: &[Vec2], next: &[Vec2], desired: &[Vec2]) -> f64 {
    prev.iter()
        .zip(next)
        .zip(desired)
        .map(|((x, y), v)| (*y - *x - *v).norm_sq())
        .sum()
}

/// Local navigation step over the active agents of `world`.
pub fn lnavi_step(world: &WorldState, desired: &[Vec2], cfg: &SolverConfig) -> Result<StepOutcome, DynamicsError> {
    let active: Vec<usize> = (0..world.agents.len()).filter(|&k| world.agents[k].active).collect();
    if desired.len() != active.len() {
        return Err(DynamicsError::LengthMismatch { what: "desired velocities", expected: active.len(), found: desired.len() });
    }
    let ids: Vec<u64> = active.iter().map(|&k| world.agents[k].id).collect();
    let pos: Vec<Vec2> = active.iter().map(|&k| world.agents[k].pos).collect();
    LocalNavigator::new(&world.env, world.r, *cfg).step(&ids, &pos, desired)
}

/// Projection solver bound to one environment and agent radius.
#[derive(Debug, Clone, Copy)]
pub struct LocalNavigator<'a> {
    env: &'a Environment,
    r: f64,
    cfg: SolverConfig,
}

impl<'a> LocalNavigator<'a> {
    pub fn new(env: &'a Environment, r: f64, cfg: SolverConfig) -> Self {
        Self { env, r, cfg }
    }

    /// Steps agents `ids` at `pos` with desired displacements `desired`.
    /// All slices are aligned; outputs follow the same order.
    pub fn step(&self, ids: &[u64], pos: &[Vec2], desired: &[Vec2]) -> Result<StepOutcome, DynamicsError> {
        let n = ids.len();
        for (what, len) in [("positions", pos.len()), ("desired velocities", desired.len())] {
            if len != n {
                return Err(DynamicsError::LengthMismatch { what, expected: n, found: len });
            }
        }
        for (id, v) in ids.iter().zip(desired) {
            if !v.is_finite() {
                return Err(DynamicsError::NonFinite(*id));
            }
        }
        // Work in id order so the result does not depend on input order.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&k| ids[k]);
        let x: Vec<Vec2> = order.iter().map(|&k| pos[k]).collect();
        let v: Vec<Vec2> = order.iter().map(|&k| desired[k]).collect();
        let mut y: Vec<Vec2> = x.iter().zip(&v).map(|(a, b)| *a + *b).collect();

        for _ in 0..self.cfg.projection_sweeps {
            if !self.sweep(&x, &mut y) {
                break;
            }
        }

        let mut stall = None;
        let mut bad = self.violators(&x, &y);
        if !bad.is_empty() {
            let (reverted, residual) = self.pull_back(&x, &mut y, bad);
            stall = Some(SolverStall { reverted: reverted.iter().map(|&k| ids[order[k]]).collect(), residual });
            bad = Vec::new();
        }
        debug_assert!(bad.is_empty());

        // The freeze solution is feasible whenever the input is; never do worse.
        let freeze_cost: f64 = v.iter().map(|d| d.norm_sq()).sum();
        if step_objective(&x, &y, &v) > freeze_cost && stall.as_ref().map_or(true, |s| s.residual == 0) {
            y.clone_from(&x);
        }

        let mut positions = vec![Vec2::ZERO; n];
        for (slot, &k) in order.iter().enumerate() {
            positions[k] = y[slot];
        }
        Ok(StepOutcome { positions, stall })
    }

    fn pairs(&self, x: &[Vec2], y: &[Vec2]) -> Vec<(usize, usize)> {
        let disp: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.dist(*b)).collect();
        let max_disp = disp.iter().cloned().fold(0.0, f64::max);
        let reach = 2.0 * self.r + 2.0 * max_disp + 1e-9;
        HashGrid::new(reach, x)
            .candidate_pairs(x)
            .into_iter()
            .filter(|&(a, b)| x[a].dist(x[b]) <= 2.0 * self.r + disp[a] + disp[b] + 1e-9)
            .collect()
    }

    /// One projection pass over all substeps. Returns whether anything moved.
    fn sweep(&self, x: &[Vec2], y: &mut [Vec2]) -> bool {
        let pairs = self.pairs(x, y);
        let s_count = self.cfg.substeps.max(1);
        let two_r = 2.0 * self.r;
        let mut moved = false;
        for s in 1..=s_count {
            let gamma = s as f64 / s_count as f64;
            for &(a, b) in &pairs {
                let pa = x[a] + (y[a] - x[a]) * gamma;
                let pb = x[b] + (y[b] - x[b]) * gamma;
                let d = pa - pb;
                let dist = d.norm();
                if dist >= two_r {
                    continue;
                }
                let n = if dist > 1e-12 { d / dist } else { Vec2::new(-1.0, 0.0) };
                let shift = n * ((two_r - dist) * 0.5 / gamma);
                y[a] += shift;
                y[b] -= shift;
                moved = true;
            }
            for k in 0..x.len() {
                let p = x[k] + (y[k] - x[k]) * gamma;
                let push = self.obstacle_push(p);
                if push != Vec2::ZERO {
                    y[k] += push / gamma;
                    moved = true;
                }
            }
        }
        moved
    }

    /// Displacement taking `p` to clearance `r` from walls and obstacles.
    fn obstacle_push(&self, p: Vec2) -> Vec2 {
        let r = self.r;
        let mut q = p;
        let b = &self.env.bounds;
        q.x = q.x.clamp(b.x0 + r, b.x1 - r);
        q.y = q.y.clamp(b.y0 + r, b.y1 - r);
        for o in &self.env.obstacles {
            if q.x <= o.x0 - r || q.x >= o.x1 + r || q.y <= o.y0 - r || q.y >= o.y1 + r {
                continue;
            }
            let d = o.distance(q);
            if d >= r {
                continue;
            }
            if d > 0.0 {
                let c = o.closest_point(q);
                q = c + (q - c) * (r / d);
            } else {
                // Inside: leave through the nearest face.
                let faces = [
                    (q.x - o.x0, Vec2::new(o.x0 - r, q.y)),
                    (o.x1 - q.x, Vec2::new(o.x1 + r, q.y)),
                    (q.y - o.y0, Vec2::new(q.x, o.y0 - r)),
                    (o.y1 - q.y, Vec2::new(q.x, o.y1 + r)),
                ];
                let mut best = faces[0];
                for f in &faces[1..] {
                    if f.0 < best.0 {
                        best = *f;
                    }
                }
                q = best.1;
            }
        }
        q - p
    }

    /// Indices (in working order) of agents taking part in any violated
    /// constraint beyond tolerance, sorted and deduplicated.
    fn violators(&self, x: &[Vec2], y: &[Vec2]) -> Vec<usize> {
        let tol = self.cfg.tolerance;
        let s_count = self.cfg.substeps.max(1);
        let pairs = self.pairs(x, y);
        let mut bad = vec![false; x.len()];
        for s in 1..=s_count {
            let gamma = s as f64 / s_count as f64;
            let at = |k: usize| x[k] + (y[k] - x[k]) * gamma;
            for &(a, b) in &pairs {
                if at(a).dist(at(b)) < 2.0 * self.r - tol {
                    bad[a] = true;
                    bad[b] = true;
                }
            }
            for (k, flag) in bad.iter_mut().enumerate() {
                if self.env.clearance(at(k)) < self.r - tol {
                    *flag = true;
                }
            }
        }
        bad.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect()
    }

    /// Halves the displacement of violating agents until the step is feasible
    /// (at worst every violator stays where it was).
    fn pull_back(&self, x: &[Vec2], y: &mut [Vec2], mut bad: Vec<usize>) -> (Vec<usize>, usize) {
        const HALVINGS: u32 = 8;
        let target: Vec<Vec2> = y.to_vec();
        let mut level = vec![0u32; x.len()];
        let mut touched = vec![false; x.len()];
        loop {
            let mut changed = false;
            for &k in &bad {
                touched[k] = true;
                if level[k] <= HALVINGS {
                    level[k] += 1;
                    let frac = if level[k] > HALVINGS { 0.0 } else { 0.5f64.powi(level[k] as i32) };
                    y[k] = x[k] + (target[k] - x[k]) * frac;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            bad = self.violators(x, y);
            if bad.is_empty() {
                break;
            }
        }
        let reverted = touched.iter().enumerate().filter(|(_, &t)| t).map(|(k, _)| k).collect();
        (reverted, bad.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;

    fn open(size: f64) -> Environment {
        Environment::new(size, size, vec![])
    }

    fn nav(env: &Environment) -> LocalNavigator<'_> {
        LocalNavigator::new(env, 0.2, SolverConfig::default())
    }

    #[test]
    fn single_agent_moves_freely() {
        let env = open(10.0);
        let out = nav(&env).step(&[7], &[Vec2::new(5.0, 5.0)], &[Vec2::new(0.15, -0.1)]).unwrap();
        assert_eq!(out.positions[0], Vec2::new(5.15, 4.9));
        assert!(out.stall.is_none());
    }

    #[test]
    fn head_on_pair_keeps_only_tangential_motion() {
        let env = open(10.0);
        let pos = [Vec2::new(4.8, 5.0), Vec2::new(5.2, 5.0)];
        let v = [Vec2::new(0.1, 0.05), Vec2::new(-0.1, 0.05)];
        let out = nav(&env).step(&[0, 1], &pos, &v).unwrap();
        for k in 0..2 {
            assert!((out.positions[k].x - pos[k].x).abs() < 1e-12, "{:?}", out.positions);
            assert!((out.positions[k].y - 5.05).abs() < 1e-12);
        }
    }

    #[test]
    fn obstacle_blocks_motion() {
        let env = Environment::new(6.0, 6.0, vec![Rect::new(2.0, 2.0, 4.0, 4.0)]);
        let out = nav(&env).step(&[0], &[Vec2::new(1.8, 3.0)], &[Vec2::new(0.2, 0.1)]).unwrap();
        let p = out.positions[0];
        assert!(env.clearance(p) >= 0.2 - 1e-9);
        assert!((p.y - 3.1).abs() < 1e-12);
    }

    #[test]
    fn min_separation_examples() {
        let env = Arc::new(open(4.0));
        let agent = |id, x: f64| AgentState {
            id,
            pos: Vec2::new(x, 0.0),
            goal: Vec2::ZERO,
            spawn_pos: Vec2::ZERO,
            spawn_sd: 1.0,
            active: true,
        };
        let w = WorldState { t: 0, agents: vec![agent(0, 0.0), agent(1, 1.0)], env: env.clone(), r: 0.2 };
        assert_eq!(min_separation(&w).unwrap(), 1.0);
        let w = WorldState { t: 0, agents: vec![agent(0, 0.0)], env, r: 0.2 };
        assert_eq!(min_separation(&w), Err(DynamicsError::TooFewAgents(1)));
    }

    #[test]
    fn hash_grid_finds_all_close_pairs() {
        let pts: Vec<Vec2> = (0..30).map(|k| Vec2::new((k * 7 % 11) as f64 * 0.3, (k * 5 % 13) as f64 * 0.3)).collect();
        let cand = HashGrid::new(0.5, &pts).candidate_pairs(&pts);
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if pts[a].dist(pts[b]) <= 0.5 {
                    assert!(cand.binary_search(&(a, b)).is_ok());
                }
            }
        }
    }
}
