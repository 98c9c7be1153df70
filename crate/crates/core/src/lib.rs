//! Environment-centric multi-agent navigation.
//!
//! The free space is cut into unit blocks; a graph recurrent network assigns
//! every block a hidden state encoding a local traffic rule. Agents follow
//! visibility-graph shortest paths whose velocities are modulated by a small
//! rule-following network of the block they occupy, and a constraint
//! projection step keeps them collision free. The rule network is trained by
//! imitating a roundabout-style expert or by evolution strategies on a
//! soft-min congestion reward.

pub mod cli;
pub mod dynamics;
pub mod env;
pub mod geom;
pub mod nn;
pub mod policy;
pub mod scenario;
pub mod training;

pub use geom::{Rect, Vec2};

/// Agent radius in block units.
pub const DEFAULT_RADIUS: f64 = 0.2;
/// Per-step speed limit; one step moves at most one radius.
pub const DEFAULT_V_MAX: f64 = 0.2;
