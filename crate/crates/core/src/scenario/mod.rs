//! Scenarios (environment plus spawn/despawn rules), rollouts, the
//! fraction-of-travel reward and procedural scenario generation.

mod generate;
mod reward;
mod sim;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::env::{EnvError, Environment, EnvironmentFile, GoalRoute};
use crate::geom::{Rect, Vec2};
use crate::policy::{NavContext, PolicyError};
use crate::{DEFAULT_RADIUS, DEFAULT_V_MAX};

pub use generate::{generate_scenarios, GenConfig, Preset};
pub use reward::{fraction_of_travel, metrics, reward, travel_fraction, MetricsReport, RunMetrics, Stat};
pub use sim::{rollout, simulate, AgentRecord, Frame, RolloutResult, SimOptions, Simulator};
pub use trace::{read_trace, write_trace, TraceHeader, TRACE_FORMAT_VERSION};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("spawn point {index}: {reason}")]
    InvalidSpawn { index: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("spawn and goal coincide (zero shortest distance)")]
    DegenerateSpawn,
    #[error("rollout produced no agents")]
    EmptyRollout,
    #[error("scenario generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("unknown scenario format version {0}")]
    UnknownVersion(u32),
    #[error("malformed scenario file: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnPoint {
    pub pos: Vec2,
    pub goal: Vec2,
    pub group: u32,
}

/// Environment plus spawn and despawn rules.
///
/// Every step, while `t < spawn_until` and `t` is a multiple of
/// `spawn_interval`, each spawn point (in order) emits an agent at its
/// position plus a uniform offset in `[-jitter, jitter]²`, provided fewer
/// than `max_agents` are active, the spot keeps `2r + margin` from every
/// active agent and `r` from obstacles. Agents leave once they enter the
/// block of their goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub env: Environment,
    pub spawns: Vec<SpawnPoint>,
    pub max_agents: usize,
    pub horizon: usize,
    pub spawn_until: usize,
    pub spawn_interval: usize,
    pub jitter: f64,
    pub margin: f64,
    pub r: f64,
    pub v_max: f64,
}

impl Scenario {
    /// Full-scale defaults: 40 agents, 500 steps, spawning during the first
    /// half of the horizon.
    pub fn new(env: Environment, spawns: Vec<SpawnPoint>) -> Self {
        Self {
            env,
            spawns,
            max_agents: 40,
            horizon: 500,
            spawn_until: 250,
            spawn_interval: 1,
            jitter: 0.2,
            margin: 0.05,
            r: DEFAULT_RADIUS,
            v_max: DEFAULT_V_MAX,
        }
    }

    /// Sets the horizon and keeps spawning to its first half.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self.spawn_until = horizon / 2;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.max_agents == 0 || self.horizon == 0 || self.spawn_interval == 0 {
            return Err(ScenarioError::Invalid("max_agents, horizon and spawn_interval must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.margin >= 0.0) {
            return Err(ScenarioError::Invalid("jitter and margin must be non-negative".into()));
        }
        if self.spawns.is_empty() {
            return Err(ScenarioError::Invalid("no spawn points".into()));
        }
        Ok(())
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            format_version: SCENARIO_FORMAT_VERSION,
            environment: self.env.to_file(),
            spawns: self.spawns.clone(),
            max_agents: self.max_agents,
            horizon: self.horizon,
            spawn_until: Some(self.spawn_until),
            spawn_interval: self.spawn_interval,
            jitter: self.jitter,
            margin: self.margin,
            radius: self.r,
            v_max: self.v_max,
        }
    }

    pub fn from_file(f: ScenarioFile) -> Result<Self, ScenarioError> {
        if f.format_version != SCENARIO_FORMAT_VERSION {
            return Err(ScenarioError::UnknownVersion(f.format_version));
        }
        let s = Self {
            env: Environment::from_file(f.environment)?,
            spawns: f.spawns,
            max_agents: f.max_agents,
            horizon: f.horizon,
            spawn_until: f.spawn_until.unwrap_or(f.horizon / 2),
            spawn_interval: f.spawn_interval,
            jitter: f.jitter,
            margin: f.margin,
            r: f.radius,
            v_max: f.v_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        let f: ScenarioFile = serde_json::from_str(s).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
        Self::from_file(f)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let s = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
    }
}

fn default_max_agents() -> usize {
    40
}
fn default_horizon() -> usize {
    500
}
fn default_interval() -> usize {
    1
}
fn default_jitter() -> f64 {
    0.2
}
fn default_margin() -> f64 {
    0.05
}
fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub environment: EnvironmentFile,
    pub spawns: Vec<SpawnPoint>,
    #[serde(default = "default_max_agents")]
    pub max_agents: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub spawn_until: Option<usize>,
    #[serde(default = "default_interval")]
    pub spawn_interval: usize,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

/// A scenario with its navigation structures built and spawn points checked.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub ctx: NavContext,
    /// One route per spawn point, toward its goal.
    pub routes: Vec<GoalRoute>,
    /// Shortest distance from each spawn point to its goal.
    pub spawn_sd: Vec<f64>,
}

impl PreparedScenario {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let ctx = NavContext::new(scenario.env.clone(), scenario.r, scenario.v_max)?;
        let mut routes = Vec::with_capacity(scenario.spawns.len());
        let mut spawn_sd = Vec::with_capacity(scenario.spawns.len());
        for (index, s) in scenario.spawns.iter().enumerate() {
            let bad = |reason: String| ScenarioError::InvalidSpawn { index, reason };
            for (what, p) in [("spawn", s.pos), ("goal", s.goal)] {
                let c = scenario.env.clearance(p);
                if !(c >= scenario.r) {
                    return Err(bad(format!("{what} {p:?} has clearance {c} < r")));
                }
            }
            if ctx.grid.block_id_at(s.pos)? == ctx.grid.block_id_at(s.goal)? {
                return Err(bad("spawn lies in the goal block".into()));
            }
            let route = ctx.vg.route_to(s.goal);
            let sd = route.distance_from(&ctx.vg, s.pos)?;
            if !(sd > 0.0) {
                return Err(ScenarioError::DegenerateSpawn);
            }
            routes.push(route);
            spawn_sd.push(sd);
        }
        Ok(Self { scenario, ctx, routes, spawn_sd })
    }
}

/// Greedy cover of the blocked cells of a `width × height` mask by
/// rectangles: maximal horizontal runs, merged upward while identical.
pub fn mask_to_obstacles(width: usize, height: usize, free: &[bool]) -> Vec<Rect> {
    let mut used = vec![false; width * height];
    let mut out = Vec::new();
    for j in 0..height {
        let mut i = 0;
        while i < width {
            let k = j * width + i;
            if free[k] || used[k] {
                i += 1;
                continue;
            }
            let mut i1 = i;
            while i1 < width && !free[j * width + i1] && !used[j * width + i1] {
                i1 += 1;
            }
            let mut j1 = j + 1;
            while j1 < height && (i..i1).all(|x| !free[j1 * width + x] && !used[j1 * width + x]) {
                j1 += 1;
            }
            for y in j..j1 {
                for x in i..i1 {
                    used[y * width + x] = true;
                }
            }
            out.push(Rect::new(i as f64, j as f64, i1 as f64, j1 as f64));
            i = i1;
        }
    }
    out
}

/// Plus-shaped junction of two 2-wide corridors on a 14 × 14 map, with two
/// groups travelling between the west and east ends in opposite directions.
pub fn crossing_fixture() -> Scenario {
    let env = Environment::new(
        14.0,
        14.0,
        vec![
            Rect::new(0.0, 0.0, 6.0, 6.0),
            Rect::new(8.0, 0.0, 14.0, 6.0),
            Rect::new(0.0, 8.0, 6.0, 14.0),
            Rect::new(8.0, 8.0, 14.0, 14.0),
        ],
    );
    let spawns = vec![
        SpawnPoint { pos: Vec2::new(0.5, 6.5), goal: Vec2::new(13.5, 7.5), group: 0 },
        SpawnPoint { pos: Vec2::new(13.5, 7.5), goal: Vec2::new(0.5, 6.5), group: 1 },
    ];
    Scenario::new(env, spawns)
}
