//! Environment geometry: bounds, rectangular obstacles, the unit-block
//! decomposition and visibility-graph shortest paths.

mod grid;
mod visibility;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{Rect, Vec2};

pub use grid::{decompose_blocks, BlockGrid, Cell, Dir, DIRS};
pub use visibility::{GoalRoute, VisibilityGraph};

pub const ENV_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("environment corner {0} is not an integer")]
    NonIntegerGeometry(f64),
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("free space is disconnected ({components} components)")]
    DisconnectedFreespace { components: usize },
    #[error("free block ({i}, {j}) is not part of any 2-block-wide passage")]
    CorridorTooNarrow { i: usize, j: usize },
    #[error("environment has no free block")]
    NoFreespace,
    #[error("point ({x}, {y}) is not inside a free block")]
    OutOfFreespace { x: f64, y: f64 },
    #[error("agent radius {r} is infeasible for corridors of width {width}")]
    InfeasibleClearance { r: f64, width: f64 },
    #[error("no collision-free path between the query points")]
    Unreachable,
    #[error("unsupported environment format version {0}")]
    UnknownVersion(u32),
    #[error("malformed environment file: {0}")]
    Malformed(String),
}

/// A rectangular world with rectangular interior obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub bounds: Rect,
    pub obstacles: Vec<Rect>,
}

/// On-disk layout; see `schemas/environment.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub format_version: u32,
    #[serde(default)]
    pub origin: Vec2,
    pub bounds: [f64; 2],
    pub obstacles: Vec<Rect>,
}

impl Environment {
    /// Environment with its lower-left corner at the origin.
    pub fn new(width: f64, height: f64, obstacles: Vec<Rect>) -> Self {
        Self { bounds: Rect::new(0.0, 0.0, width, height), obstacles }
    }

    pub fn width(&self) -> f64 {
        self.bounds.width()
    }

    pub fn height(&self) -> f64 {
        self.bounds.height()
    }

    pub fn origin(&self) -> Vec2 {
        Vec2::new(self.bounds.x0, self.bounds.y0)
    }

    pub fn translate(&self, d: Vec2) -> Environment {
        Environment {
            bounds: self.bounds.translate(d),
            obstacles: self.obstacles.iter().map(|o| o.translate(d)).collect(),
        }
    }

    /// Checks the structural invariants: positive size, obstacles inside the
    /// bounds with non-degenerate extent, and pairwise disjoint interiors.
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = std::iter::once(&self.bounds).chain(self.obstacles.iter());
        for r in all {
            for v in [r.x0, r.y0, r.x1, r.y1] {
                if !v.is_finite() {
                    return Err(EnvError::Invalid("non-finite coordinate".into()));
                }
            }
        }
        if self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(EnvError::Invalid("bounds must have positive size".into()));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if o.width() <= 0.0 || o.height() <= 0.0 {
                return Err(EnvError::Invalid(format!("obstacle {k} is degenerate")));
            }
            if !self.bounds.contains_rect(o) {
                return Err(EnvError::Invalid(format!("obstacle {k} leaves the bounds")));
            }
            for (l, p) in self.obstacles.iter().enumerate().skip(k + 1) {
                if o.interiors_overlap(p) {
                    return Err(EnvError::Invalid(format!("obstacles {k} and {l} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Euclidean clearance of `p` from obstacles and walls. Negative outside
    /// the bounds, zero inside an obstacle.
    pub fn clearance(&self, p: Vec2) -> f64 {
        let b = &self.bounds;
        let mut c = (p.x - b.x0).min(b.x1 - p.x).min(p.y - b.y0).min(b.y1 - p.y);
        for o in &self.obstacles {
            c = c.min(o.distance(p));
        }
        c
    }

    /// Chebyshev clearance; the metric of the visibility graph's free space.
    pub fn linf_clearance(&self, p: Vec2) -> f64 {
        let b = &self.bounds;
        let mut c = (p.x - b.x0).min(b.x1 - p.x).min(p.y - b.y0).min(b.y1 - p.y);
        for o in &self.obstacles {
            c = c.min(o.linf_distance(p));
        }
        c
    }

    pub fn to_file(&self) -> EnvironmentFile {
        EnvironmentFile {
            format_version: ENV_FORMAT_VERSION,
            origin: self.origin(),
            bounds: [self.width(), self.height()],
            obstacles: self.obstacles.clone(),
        }
    }

    pub fn from_file(f: EnvironmentFile) -> Result<Self, EnvError> {
        if f.format_version != ENV_FORMAT_VERSION {
            return Err(EnvError::UnknownVersion(f.format_version));
        }
        let env = Environment {
            bounds: Rect::new(f.origin.x, f.origin.y, f.origin.x + f.bounds[0], f.origin.y + f.bounds[1]),
            obstacles: f.obstacles,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("environment serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnvError> {
        let f: EnvironmentFile = serde_json::from_str(s).map_err(|e| EnvError::Malformed(e.to_string()))?;
        Self::from_file(f)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let s = std::fs::read_to_string(path).map_err(|e| EnvError::Malformed(e.to_string()))?;
        Self::from_json(&s)
    }
}
