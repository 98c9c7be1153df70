use super::{decompose_blocks, EnvError, Environment};
use crate::geom::{Rect, Vec2};

/// Slack used when testing segments against inflated obstacles, so that paths
/// running exactly along an inflated boundary count as clear.
const GRAZE: f64 = 1e-9;
const TO_GOAL: u32 = u32::MAX;

/// Visibility graph over the reflex obstacle corners, each pushed `r` per axis
/// into free space, with precomputed all-pairs shortest distances.
///
/// Clearance is measured per axis: the free space of the graph is the bounds
/// shrunk by `r` minus every obstacle grown by `r` on each side. Every edge of
/// that polygonal domain is then at Euclidean distance ≥ `r` from obstacles.
#[derive(Debug, Clone)]
pub struct VisibilityGraph {
    env: Environment,
    r: f64,
    nodes: Vec<Vec2>,
    edges: Vec<(usize, usize, f64)>,
    dist: Vec<f64>,
    next: Vec<u32>,
}

/// Distances and next hops from every graph node to one fixed goal.
/// Built once per goal and reused for every per-step query.
#[derive(Debug, Clone)]
pub struct GoalRoute {
    goal: Vec2,
    goal_radius: f64,
    to_goal: Vec<f64>,
    next: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub point: Vec2,
    pub distance: f64,
}

impl VisibilityGraph {
    pub fn build(env: &Environment, r: f64) -> Result<Self, EnvError> {
        let grid = decompose_blocks(env)?;
        // Decomposition guarantees passages at least two blocks wide.
        let width = 2.0;
        if !(r > 0.0) || 2.0 * r >= width {
            return Err(EnvError::InfeasibleClearance { r, width });
        }
        let origin = grid.origin();
        let blocked = |i: isize, j: isize| !grid.is_free(i, j);
        let mut nodes = Vec::new();
        for j in 0..=grid.height() as isize {
            for i in 0..=grid.width() as isize {
                // Cells around the vertex (i, j): lower-left, lower-right,
                // upper-left, upper-right, with the push direction away from each.
                let around = [
                    (blocked(i - 1, j - 1), Vec2::new(r, r)),
                    (blocked(i, j - 1), Vec2::new(-r, r)),
                    (blocked(i - 1, j), Vec2::new(r, -r)),
                    (blocked(i, j), Vec2::new(-r, -r)),
                ];
                let mut hit = around.iter().filter(|(b, _)| *b);
                if let (Some((_, push)), None) = (hit.next(), hit.next()) {
                    let p = origin + Vec2::new(i as f64, j as f64) + *push;
                    if env.linf_clearance(p) >= r - GRAZE {
                        nodes.push(p);
                    }
                }
            }
        }
        let mut vg = VisibilityGraph { env: env.clone(), r, nodes, edges: Vec::new(), dist: Vec::new(), next: Vec::new() };
        vg.connect();
        Ok(vg)
    }

    fn connect(&mut self) {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n * n];
        let mut next = vec![u32::MAX; n * n];
        for a in 0..n {
            dist[a * n + a] = 0.0;
            next[a * n + a] = a as u32;
            for b in a + 1..n {
                if self.visible(self.nodes[a], self.nodes[b], self.r) {
                    let w = self.nodes[a].dist(self.nodes[b]);
                    self.edges.push((a, b, w));
                    dist[a * n + b] = w;
                    dist[b * n + a] = w;
                    next[a * n + b] = b as u32;
                    next[b * n + a] = a as u32;
                }
            }
        }
        for k in 0..n {
            for a in 0..n {
                let dak = dist[a * n + k];
                if !dak.is_finite() {
                    continue;
                }
                for b in 0..n {
                    let alt = dak + dist[k * n + b];
                    if alt < dist[a * n + b] {
                        dist[a * n + b] = alt;
                        next[a * n + b] = next[a * n + k];
                    }
                }
            }
        }
        self.dist = dist;
        self.next = next;
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Precomputed shortest distance between two graph nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.nodes.len() + b]
    }

    /// Whether segment `a`–`b` keeps per-axis clearance `rq` from every
    /// obstacle and wall.
    pub fn visible(&self, a: Vec2, b: Vec2, rq: f64) -> bool {
        let m = rq - GRAZE;
        let inner = self.env.bounds.expand(-m);
        for p in [a, b] {
            if p.x < inner.x0 || p.x > inner.x1 || p.y < inner.y0 || p.y > inner.y1 {
                return false;
            }
        }
        let (lx, hx) = if a.x < b.x { (a.x, b.x) } else { (b.x, a.x) };
        let (ly, hy) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
        self.env.obstacles.iter().all(|o| {
            let g: Rect = o.expand(m);
            if hx <= g.x0 || lx >= g.x1 || hy <= g.y0 || ly >= g.y1 {
                return true;
            }
            !g.segment_hits_interior(a, b)
        })
    }

    /// Clearance used for segments ending at `p`: the nominal radius, or less
    /// when `p` itself sits closer to an obstacle (agents may graze corners).
    fn query_radius(&self, p: Vec2) -> f64 {
        self.r.min(self.env.linf_clearance(p)).max(0.0)
    }

    pub fn route_to(&self, goal: Vec2) -> GoalRoute {
        let rg = self.query_radius(goal);
        let n = self.nodes.len();
        let seen_by_goal: Vec<usize> = (0..n).filter(|&b| self.visible(self.nodes[b], goal, rg)).collect();
        let mut to_goal = vec![f64::INFINITY; n];
        let mut next = vec![u32::MAX; n];
        for a in 0..n {
            for &b in &seen_by_goal {
                let d = self.dist[a * n + b] + self.nodes[b].dist(goal);
                if d < to_goal[a] {
                    to_goal[a] = d;
                    next[a] = if a == b { TO_GOAL } else { self.next[a * n + b] };
                }
            }
        }
        GoalRoute { goal, goal_radius: rg, to_goal, next }
    }

    /// SD(x, g): length of the shortest clear path.
    pub fn shortest_distance(&self, x: Vec2, g: Vec2) -> Result<f64, EnvError> {
        self.route_to(g).distance_from(self, x)
    }

    /// SP(x, g): full-speed velocity toward the first waypoint of the shortest
    /// path; the exact remaining displacement when the goal is within reach.
    pub fn tentative_velocity(&self, x: Vec2, g: Vec2, v_max: f64) -> Result<Vec2, EnvError> {
        self.route_to(g).velocity(self, x, v_max)
    }
}

impl GoalRoute {
    pub fn goal(&self) -> Vec2 {
        self.goal
    }

    /// First point to head for from `x`, and the total path length.
    pub fn waypoint(&self, vg: &VisibilityGraph, x: Vec2) -> Result<Waypoint, EnvError> {
        if x == self.goal {
            return Ok(Waypoint { point: x, distance: 0.0 });
        }
        let rx = vg.query_radius(x);
        if vg.visible(x, self.goal, rx.min(self.goal_radius)) {
            return Ok(Waypoint { point: self.goal, distance: x.dist(self.goal) });
        }
        let mut best = f64::INFINITY;
        let mut best_node = usize::MAX;
        for (a, &p) in vg.nodes.iter().enumerate() {
            let tail = self.to_goal[a];
            if !tail.is_finite() {
                continue;
            }
            let head = x.dist(p);
            if head + tail < best && vg.visible(x, p, rx) {
                best = head + tail;
                best_node = a;
            }
        }
        if best_node == usize::MAX {
            return Err(EnvError::Unreachable);
        }
        let mut point = vg.nodes[best_node];
        if x.dist(point) < 1e-9 {
            // Standing on the node: aim at the hop after it.
            point = match self.next[best_node] {
                TO_GOAL => self.goal,
                n => vg.nodes[n as usize],
            };
        }
        Ok(Waypoint { point, distance: best })
    }

    pub fn distance_from(&self, vg: &VisibilityGraph, x: Vec2) -> Result<f64, EnvError> {
        self.waypoint(vg, x).map(|w| w.distance)
    }

    pub fn velocity(&self, vg: &VisibilityGraph, x: Vec2, v_max: f64) -> Result<Vec2, EnvError> {
        let w = self.waypoint(vg, x)?;
        let d = w.point - x;
        let len = d.norm();
        if len == 0.0 {
            return Ok(Vec2::ZERO);
        }
        if w.point == self.goal && len < v_max {
            return Ok(d);
        }
        Ok(d * (v_max / len))
    }
}
