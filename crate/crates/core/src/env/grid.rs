use std::collections::VecDeque;

use super::{EnvError, Environment};
use crate::geom::Vec2;

/// Integer block coordinates relative to the bounds origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Axis directions, listed in the fixed tie-break order `+x, +y, -x, -y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    PosX,
    PosY,
    NegX,
    NegY,
}

pub const DIRS: [Dir; 4] = [Dir::PosX, Dir::PosY, Dir::NegX, Dir::NegY];

impl Dir {
    pub fn offset(self) -> (isize, isize) {
        match self {
            Dir::PosX => (1, 0),
            Dir::PosY => (0, 1),
            Dir::NegX => (-1, 0),
            Dir::NegY => (0, -1),
        }
    }

    pub fn unit(self) -> Vec2 {
        let (dx, dy) = self.offset();
        Vec2::new(dx as f64, dy as f64)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Dir::PosX => "+x",
            Dir::PosY => "+y",
            Dir::NegX => "-x",
            Dir::NegY => "-y",
        }
    }
}

const NONE: u32 = u32::MAX;

/// Unit-square decomposition of the free space with 4-connected adjacency.
///
/// Free blocks carry a dense id in row-major order (`j` outer, `i` inner),
/// which is also the export order of per-block data.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    origin: Vec2,
    width: usize,
    height: usize,
    free: Vec<bool>,
    ids: Vec<u32>,
    cells: Vec<Cell>,
    nbrs: Vec<[u32; 4]>,
}

impl BlockGrid {
    /// Builds a grid from a row-major mask. Only emptiness and 4-connectivity
    /// are enforced here; corridor width is checked by [`decompose_blocks`].
    pub fn from_mask(origin: Vec2, width: usize, height: usize, free: Vec<bool>) -> Result<Self, EnvError> {
        assert_eq!(free.len(), width * height, "mask size");
        let mut ids = vec![NONE; width * height];
        let mut cells = Vec::new();
        for j in 0..height {
            for i in 0..width {
                if free[j * width + i] {
                    ids[j * width + i] = cells.len() as u32;
                    cells.push(Cell::new(i, j));
                }
            }
        }
        if cells.is_empty() {
            return Err(EnvError::NoFreespace);
        }
        let mut grid = BlockGrid { origin, width, height, free, ids, cells, nbrs: Vec::new() };
        grid.nbrs = grid
            .cells
            .iter()
            .map(|&c| {
                let mut n = [NONE; 4];
                for d in DIRS {
                    if let Some(nc) = grid.step(c, d) {
                        n[d.index()] = grid.ids[nc.j * width + nc.i];
                    }
                }
                n
            })
            .collect();
        let components = grid.count_components();
        if components != 1 {
            return Err(EnvError::DisconnectedFreespace { components });
        }
        Ok(grid)
    }

    fn count_components(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut count = 0;
        for start in 0..self.cells.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(b) = queue.pop_front() {
                for n in self.neighbor_ids(b) {
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        count
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_free(&self) -> usize {
        self.cells.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.free
    }

    pub fn is_free(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.width
            && (j as usize) < self.height
            && self.free[j as usize * self.width + i as usize]
    }

    /// The free neighbor of `c` in direction `d`, if any.
    pub fn step(&self, c: Cell, d: Dir) -> Option<Cell> {
        let (dx, dy) = d.offset();
        let (i, j) = (c.i as isize + dx, c.j as isize + dy);
        self.is_free(i, j).then(|| Cell::new(i as usize, j as usize))
    }

    pub fn id(&self, c: Cell) -> Option<usize> {
        if c.i >= self.width || c.j >= self.height {
            return None;
        }
        let id = self.ids[c.j * self.width + c.i];
        (id != NONE).then_some(id as usize)
    }

    pub fn cell(&self, id: usize) -> Cell {
        self.cells[id]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Block center in world coordinates.
    pub fn center(&self, c: Cell) -> Vec2 {
        self.origin + Vec2::new(c.i as f64 + 0.5, c.j as f64 + 0.5)
    }

    /// Free 4-neighbors of a free block, by dense id.
    pub fn neighbor_ids(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.nbrs[id].iter().filter(|&&n| n != NONE).map(|&n| n as usize)
    }

    /// Free 4-neighbors of a free block, in `+x, +y, -x, -y` order.
    pub fn block_neighbors(&self, c: Cell) -> Vec<Cell> {
        DIRS.iter().filter_map(|&d| self.step(c, d)).collect()
    }

    /// Free neighbor id in a given direction.
    pub fn neighbor_in(&self, id: usize, d: Dir) -> Option<usize> {
        let n = self.nbrs[id][d.index()];
        (n != NONE).then_some(n as usize)
    }

    /// The block containing `x` under half-open `[i, i+1)` cells.
    pub fn cell_at(&self, x: Vec2) -> Result<Cell, EnvError> {
        let rel = (x - self.origin).floor();
        let out = || EnvError::OutOfFreespace { x: x.x, y: x.y };
        if !rel.is_finite() || rel.x < 0.0 || rel.y < 0.0 {
            return Err(out());
        }
        let (i, j) = (rel.x as usize, rel.y as usize);
        if self.is_free(i as isize, j as isize) {
            Ok(Cell::new(i, j))
        } else {
            Err(out())
        }
    }

    /// Dense id of the block containing `x`.
    pub fn block_id_at(&self, x: Vec2) -> Result<usize, EnvError> {
        let c = self.cell_at(x)?;
        Ok(self.ids[c.j * self.width + c.i] as usize)
    }

    /// `I(x) = ⌊x⌋ + 0.5`: the center of the free block containing `x`.
    pub fn block_index(&self, x: Vec2) -> Result<Vec2, EnvError> {
        self.cell_at(x).map(|c| self.center(c))
    }
}

fn is_integer(v: f64) -> bool {
    v.is_finite() && v.fract() == 0.0
}

/// Splits the free space of `env` into unit blocks.
///
/// A block is free iff its unit square meets no obstacle interior. Every free
/// block must belong to at least one fully free 2×2 square, and the free
/// blocks must form a single 4-connected component.
pub fn decompose_blocks(env: &Environment) -> Result<BlockGrid, EnvError> {
    env.validate()?;
    let all = std::iter::once(&env.bounds).chain(env.obstacles.iter());
    for r in all {
        for v in [r.x0, r.y0, r.x1, r.y1] {
            if !is_integer(v) {
                return Err(EnvError::NonIntegerGeometry(v));
            }
        }
    }
    let origin = env.origin();
    let (w, h) = (env.width() as usize, env.height() as usize);
    let mut free = vec![true; w * h];
    for o in &env.obstacles {
        let i0 = (o.x0 - origin.x) as usize;
        let i1 = (o.x1 - origin.x) as usize;
        let j0 = (o.y0 - origin.y) as usize;
        let j1 = (o.y1 - origin.y) as usize;
        for j in j0..j1 {
            for i in i0..i1 {
                free[j * w + i] = false;
            }
        }
    }
    let at = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < w && (j as usize) < h && free[j as usize * w + i as usize];
    for j in 0..h as isize {
        for i in 0..w as isize {
            if !at(i, j) {
                continue;
            }
            let in_wide_square = [(-1, -1), (0, -1), (-1, 0), (0, 0)]
                .iter()
                .any(|&(di, dj)| {
                    let (a, b) = (i + di, j + dj);
                    at(a, b) && at(a + 1, b) && at(a, b + 1) && at(a + 1, b + 1)
                });
            if !in_wide_square {
                return Err(EnvError::CorridorTooNarrow { i: i as usize, j: j as usize });
            }
        }
    }
    BlockGrid::from_mask(origin, w, h, free)
}
