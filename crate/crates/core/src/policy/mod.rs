//! The rule network (GRNN + RFU), the shortest-path baseline and the
//! hand-crafted lane/roundabout expert.

mod grnn;
mod rfu;
mod rulebook;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{BlockGrid, EnvError, Environment, GoalRoute, VisibilityGraph};
use crate::geom::Vec2;
use crate::nn::{MlpSpec, NnError, ParamVector};

pub use grnn::{
    grnn_backward, grnn_forward_traced, grnn_infer, grnn_infer_count, BlockState, GrnnConfig, GrnnTrace, HiddenField,
    HiddenFieldFile,
};
pub(crate) use rfu::rfu_input;
pub use rfu::{clamp_backward, clamp_velocity, rfu_modulate, CLAMP_EPS};
pub use rulebook::{derive_rulebook, expert_direction, Rulebook};

/// Width of every per-block hidden state.
pub const HIDDEN: usize = 32;
/// RFU input: hidden state, in-block offset, tentative velocity.
pub const RFU_INPUT: usize = HIDDEN + 4;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("block ({i}, {j}) does not belong to a 2-wide corridor or intersection")]
    UnclassifiableBlock { i: usize, j: usize },
    #[error("rulebook is not strongly connected: block ({i}, {j}) cannot reach every other block")]
    RulebookDisconnected { i: usize, j: usize },
    #[error("K must be at least 1")]
    ZeroSweeps,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// How neighbor messages are combined before the H update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of all neighbor messages; H sees `[h, Σ m]` (64 inputs).
    #[default]
    Sum,
    /// One fixed slot per direction (+x, +y, −x, −y), zero when the
    /// neighbor is missing; H sees `[h, m₊ₓ, m₊ᵧ, m₋ₓ, m₋ᵧ]` (160 inputs).
    Concat,
}

/// Shapes of the three networks and their placement in θ.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub econv: MlpSpec,
    pub update: MlpSpec,
    pub rfu: MlpSpec,
    pub aggregation: Aggregation,
}

impl Default for PolicyNet {
    fn default() -> Self {
        Self::new(Aggregation::Sum)
    }
}

impl PolicyNet {
    pub fn new(aggregation: Aggregation) -> Self {
        let agg = match aggregation {
            Aggregation::Sum => HIDDEN,
            Aggregation::Concat => 4 * HIDDEN,
        };
        Self {
            econv: MlpSpec::new(&[2 + HIDDEN, 32, 32, HIDDEN], false),
            update: MlpSpec::new(&[HIDDEN + agg, 32, HIDDEN], true),
            rfu: MlpSpec::new(&[RFU_INPUT, 32, 32, 16, 2], false),
            aggregation,
        }
    }

    pub fn aggregate_width(&self) -> usize {
        self.update.input_len() - HIDDEN
    }

    pub fn param_count(&self) -> usize {
        self.econv.param_count() + self.update.param_count() + self.rfu.param_count()
    }

    pub fn econv_range(&self) -> Range<usize> {
        0..self.econv.param_count()
    }

    pub fn update_range(&self) -> Range<usize> {
        let a = self.econv.param_count();
        a..a + self.update.param_count()
    }

    pub fn rfu_range(&self) -> Range<usize> {
        let a = self.update_range().end;
        a..a + self.rfu.param_count()
    }

    pub fn econv_params<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.econv_range()]
    }

    pub fn update_params<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.update_range()]
    }

    pub fn rfu_params<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.rfu_range()]
    }

    /// All-zero θ with the named segment table.
    pub fn zero_params(&self) -> ParamVector {
        ParamVector::for_networks(&[("econv", &self.econv), ("h", &self.update), ("rfu", &self.rfu)])
    }

    pub fn check_params(&self, p: &ParamVector) -> Result<(), PolicyError> {
        let want = self.zero_params();
        if p.segments() != want.segments() {
            return Err(NnError::Layout("parameter segments do not match the policy network".into()).into());
        }
        Ok(())
    }

    /// RFU fixture whose output is exactly `v̄`: the first hidden layer
    /// splits `v̄` into `relu(±v̄)`, the middle layers pass those through and
    /// the last layer recombines them. GRNN weights stay zero.
    pub fn identity_shortcut_params(&self) -> ParamVector {
        let mut p = self.zero_params();
        let off = self.rfu_range().start;
        let w = &self.rfu.widths;
        let data = p.as_mut_slice();
        let mut base = off;
        for l in 0..self.rfu.layers() {
            let (n_in, n_out) = (w[l], w[l + 1]);
            let mut set = |i: usize, o: usize, v: f64| data[base + i * n_out + o] = v;
            if l == 0 {
                // inputs 34, 35 are v̄x, v̄y
                set(HIDDEN + 2, 0, 1.0);
                set(HIDDEN + 2, 1, -1.0);
                set(HIDDEN + 3, 2, 1.0);
                set(HIDDEN + 3, 3, -1.0);
            } else if l + 1 < self.rfu.layers() {
                for k in 0..4 {
                    set(k, k, 1.0);
                }
            } else {
                set(0, 0, 1.0);
                set(1, 0, -1.0);
                set(2, 1, 1.0);
                set(3, 1, -1.0);
            }
            base += n_in * n_out + n_out;
        }
        p
    }
}

/// Geometry shared by every policy query in one environment.
#[derive(Debug, Clone)]
pub struct NavContext {
    pub env: Arc<Environment>,
    pub grid: Arc<BlockGrid>,
    pub vg: Arc<VisibilityGraph>,
    pub r: f64,
    pub v_max: f64,
}

impl NavContext {
    pub fn new(env: Environment, r: f64, v_max: f64) -> Result<Self, EnvError> {
        let grid = crate::env::decompose_blocks(&env)?;
        let vg = VisibilityGraph::build(&env, r)?;
        Ok(Self { env: Arc::new(env), grid: Arc::new(grid), vg: Arc::new(vg), r, v_max })
    }

    pub fn tentative(&self, route: &GoalRoute, x: Vec2) -> Result<Vec2, EnvError> {
        route.velocity(&self.vg, x, self.v_max)
    }
}

/// Which controller produces agent velocities.
#[derive(Debug, Clone)]
pub enum PolicySource {
    Neural { net: Arc<PolicyNet>, params: Arc<ParamVector>, grnn: GrnnConfig },
    Baseline,
    Expert,
}

impl PolicySource {
    pub fn neural(params: ParamVector, grnn: GrnnConfig) -> Self {
        Self::Neural { net: Arc::new(PolicyNet::default()), params: Arc::new(params), grnn }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Neural { .. } => "neural",
            Self::Baseline => "baseline",
            Self::Expert => "expert",
        }
    }

    /// Runs the one-off per-environment work: GRNN inference for the
    /// neural policy, rulebook derivation for the expert.
    pub fn prepare(&self, ctx: &NavContext) -> Result<PreparedPolicy, PolicyError> {
        Ok(match self {
            Self::Neural { net, params, grnn } => {
                net.check_params(params)?;
                if grnn.k == Some(0) {
                    return Err(PolicyError::ZeroSweeps);
                }
                let field = grnn_infer(net, params.as_slice(), &ctx.grid, grnn);
                PreparedPolicy::Neural { net: net.clone(), params: params.clone(), field: Arc::new(field) }
            }
            Self::Baseline => PreparedPolicy::Baseline,
            Self::Expert => PreparedPolicy::Expert(Arc::new(derive_rulebook(&ctx.grid)?)),
        })
    }
}

/// A policy bound to one environment, ready for per-agent queries.
#[derive(Debug, Clone)]
pub enum PreparedPolicy {
    Neural { net: Arc<PolicyNet>, params: Arc<ParamVector>, field: Arc<HiddenField> },
    Baseline,
    Expert(Arc<Rulebook>),
}

impl PreparedPolicy {
    /// Velocity for an agent at `x` heading to `route`'s goal.
    pub fn velocity(&self, ctx: &NavContext, route: &GoalRoute, x: Vec2) -> Result<Vec2, PolicyError> {
        let v_bar = ctx.tentative(route, x)?;
        self.modulate(ctx, x, v_bar)
    }

    /// Second stage of the policy given an already computed `v̄`.
    pub fn modulate(&self, ctx: &NavContext, x: Vec2, v_bar: Vec2) -> Result<Vec2, PolicyError> {
        match self {
            Self::Neural { net, params, field } => {
                let id = ctx.grid.block_id_at(x)?;
                let rel = x - ctx.grid.block_index(x)?;
                rfu_modulate(net, params.as_slice(), field.state(id), rel, v_bar, ctx.v_max)
            }
            Self::Baseline => Ok(clamp_velocity(v_bar, ctx.v_max, CLAMP_EPS)),
            Self::Expert(rb) => {
                let id = ctx.grid.block_id_at(x)?;
                Ok(expert_direction(rb.allowed(id), v_bar).unit() * ctx.v_max)
            }
        }
    }

    pub fn field(&self) -> Option<&HiddenField> {
        match self {
            Self::Neural { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// `π(x, g)` for the learned policy.
pub fn policy_eval(
    net: &PolicyNet,
    params: &[f64],
    field: &HiddenField,
    ctx: &NavContext,
    x: Vec2,
    g: Vec2,
) -> Result<Vec2, PolicyError> {
    let v_bar = ctx.vg.tentative_velocity(x, g, ctx.v_max)?;
    let id = ctx.grid.block_id_at(x)?;
    let rel = x - ctx.grid.block_index(x)?;
    rfu_modulate(net, params, field.state(id), rel, v_bar, ctx.v_max)
}

/// `π^b(x, g)`: the clamped shortest-path velocity.
pub fn baseline_eval(ctx: &NavContext, x: Vec2, g: Vec2) -> Result<Vec2, PolicyError> {
    let v_bar = ctx.vg.tentative_velocity(x, g, ctx.v_max)?;
    Ok(clamp_velocity(v_bar, ctx.v_max, CLAMP_EPS))
}

/// `π*(x, g)`: the allowed direction best aligned with `v̄`, at full speed.
pub fn expert_eval(rb: &Rulebook, ctx: &NavContext, x: Vec2, g: Vec2) -> Result<Vec2, PolicyError> {
    let v_bar = ctx.vg.tentative_velocity(x, g, ctx.v_max)?;
    let id = ctx.grid.block_id_at(x)?;
    Ok(expert_direction(rb.allowed(id), v_bar).unit() * ctx.v_max)
}
