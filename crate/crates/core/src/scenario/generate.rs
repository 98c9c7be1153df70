use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mask_to_obstacles, PreparedScenario, Scenario, ScenarioError, SpawnPoint};
use crate::env::{decompose_blocks, Environment};
use crate::geom::Vec2;
use crate::nn::{named_rng, Stream};
use crate::policy::derive_rulebook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    RlTrain,
    IlTrain,
    Test,
}

impl Preset {
    pub fn count(self) -> usize {
        match self {
            Preset::RlTrain => 85,
            Preset::IlTrain => 120,
            Preset::Test => 30,
        }
    }

    /// Keeps the three datasets disjoint when generated from one root seed.
    pub fn stream_offset(self) -> u64 {
        match self {
            Preset::RlTrain => 0,
            Preset::IlTrain => 1 << 20,
            Preset::Test => 2 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Smallest map side in blocks (even, at least 6).
    pub min_size: usize,
    /// Largest map side in blocks (even).
    pub max_size: usize,
    /// Number of agent groups; groups come in opposing pairs.
    pub groups: usize,
    /// Chance of keeping each lattice edge beyond the spanning tree.
    pub extra_edge_prob: f64,
    /// Minimum shortest distance between paired sites.
    pub min_site_distance: f64,
    pub max_agents: usize,
    pub horizon: usize,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_size: 10,
            max_size: 16,
            groups: 4,
            extra_edge_prob: 0.3,
            min_site_distance: 4.0,
            max_agents: 40,
            horizon: 500,
            max_attempts: 200,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, a: usize) -> usize {
        let mut a = a;
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Strictly increasing lattice lines in `0..n`, at least two apart, so that
/// parallel corridors are separated by a blocked strip.
fn lattice_lines(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut c = rng.random_range(0..2usize);
    while c < n {
        out.push(c);
        c += rng.random_range(2..=3usize);
    }
    out
}

fn try_generate(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Option<Scenario> {
    let pick_size = |rng: &mut ChaCha8Rng| 2 * rng.random_range(cfg.min_size / 2..=cfg.max_size / 2);
    let (w, h) = (pick_size(rng), pick_size(rng));
    let (ni, nj) = (w / 2, h / 2);
    let cols = lattice_lines(rng, ni);
    let rows = lattice_lines(rng, nj);
    if cols.len() * rows.len() < 2 {
        return None;
    }
    let node = |a: usize, b: usize| b * cols.len() + a;
    let mut edges = Vec::new();
    for b in 0..rows.len() {
        for a in 0..cols.len() {
            if a + 1 < cols.len() {
                edges.push((node(a, b), node(a + 1, b)));
            }
            if b + 1 < rows.len() {
                edges.push((node(a, b), node(a, b + 1)));
            }
        }
    }
    edges.shuffle(rng);
    let mut uf = UnionFind((0..cols.len() * rows.len()).collect());
    let mut kept = Vec::new();
    for &(u, v) in &edges {
        let extra: f64 = rng.random();
        if uf.union(u, v) || extra < cfg.extra_edge_prob {
            kept.push((u, v));
        }
    }
    kept.sort_unstable();

    // super-cell mask
    let mut cell_free = vec![false; ni * nj];
    let mut degree = vec![0usize; cols.len() * rows.len()];
    let pos = |n: usize| (cols[n % cols.len()], rows[n / cols.len()]);
    for &(u, v) in &kept {
        degree[u] += 1;
        degree[v] += 1;
        let ((i0, j0), (i1, j1)) = (pos(u), pos(v));
        for j in j0.min(j1)..=j0.max(j1) {
            for i in i0.min(i1)..=i0.max(i1) {
                cell_free[j * ni + i] = true;
            }
        }
    }
    let mut free = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            free[j * w + i] = cell_free[(j / 2) * ni + i / 2];
        }
    }
    let obstacles = mask_to_obstacles(w, h, &free);
    let env = Environment::new(w as f64, h as f64, obstacles);
    let grid = decompose_blocks(&env).ok()?;
    derive_rulebook(&grid).ok()?;

    // sites: dead ends first, then any other junction
    let mut dead: Vec<usize> = (0..degree.len()).filter(|&n| degree[n] == 1).collect();
    let mut other: Vec<usize> = (0..degree.len()).filter(|&n| degree[n] > 1).collect();
    dead.shuffle(rng);
    other.shuffle(rng);
    dead.extend(other);
    let sites = dead;
    let centre = |n: usize| {
        let (i, j) = pos(n);
        Vec2::new(2.0 * i as f64 + 1.0, 2.0 * j as f64 + 1.0)
    };
    let pairs = cfg.groups.div_ceil(2);
    if sites.len() < 2 * pairs {
        return None;
    }
    let mut spawns = Vec::new();
    for p in 0..pairs {
        let (a, b) = (centre(sites[2 * p]), centre(sites[2 * p + 1]));
        spawns.push(SpawnPoint { pos: a, goal: b, group: 2 * p as u32 });
        if 2 * p + 1 < cfg.groups {
            spawns.push(SpawnPoint { pos: b, goal: a, group: 2 * p as u32 + 1 });
        }
    }
    let mut sc = Scenario::new(env, spawns).with_horizon(cfg.horizon);
    sc.max_agents = cfg.max_agents;
    let prep = PreparedScenario::new(sc).ok()?;
    if prep.spawn_sd.iter().any(|&d| d < cfg.min_site_distance) {
        return None;
    }
    Some(prep.scenario)
}

/// `n` scenarios built on a lattice of 2-wide corridors joined at 2×2
/// junctions (a random spanning tree plus extra edges), with opposing
/// groups travelling between distinct corridor ends. Scenario `k` depends
/// only on `(seed, first_index + k)`.
pub fn generate_scenarios(cfg: &GenConfig, seed: u64, n: usize, first_index: u64) -> Result<Vec<Scenario>, ScenarioError> {
    if cfg.min_size < 6 || cfg.min_size % 2 != 0 || cfg.max_size % 2 != 0 || cfg.max_size < cfg.min_size {
        return Err(ScenarioError::Invalid("map sizes must be even, at least 6, with min ≤ max".into()));
    }
    if cfg.groups == 0 {
        return Err(ScenarioError::Invalid("need at least one group".into()));
    }
    (0..n)
        .map(|k| {
            let mut rng = named_rng(seed, Stream::Generate, first_index + k as u64);
            (0..cfg.max_attempts)
                .find_map(|_| try_generate(cfg, &mut rng))
                .ok_or(ScenarioError::GenerationFailed { attempts: cfg.max_attempts })
        })
        .collect()
}
