use std::collections::VecDeque;

use serde::Serialize;

use super::PolicyError;
use crate::env::{BlockGrid, Cell, Dir, DIRS};
use crate::geom::Vec2;

/// Allowed moving directions per free block, as bit masks over [`DIRS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rulebook {
    allowed: Vec<u8>,
}

fn bit(d: Dir) -> u8 {
    1 << d.index()
}

impl Rulebook {
    pub fn from_masks(allowed: Vec<u8>) -> Self {
        Self { allowed }
    }

    pub fn mask(&self, id: usize) -> u8 {
        self.allowed[id]
    }

    pub fn allowed(&self, id: usize) -> impl Iterator<Item = Dir> + Clone + '_ {
        let m = self.allowed[id];
        DIRS.into_iter().filter(move |&d| m & bit(d) != 0)
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Blocks reachable from `from` moving only along allowed directions.
    pub fn reachable(&self, grid: &BlockGrid, from: usize) -> Vec<bool> {
        let mut seen = vec![false; grid.num_free()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(b) = queue.pop_front() {
            for d in self.allowed(b) {
                if let Some(n) = grid.neighbor_in(b, d) {
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        seen
    }

    /// Fewest rule-following moves from `from` to `to`, if reachable.
    pub fn moves_between(&self, grid: &BlockGrid, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; grid.num_free()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(b) = queue.pop_front() {
            if b == to {
                return Some(dist[b]);
            }
            for d in self.allowed(b) {
                if let Some(n) = grid.neighbor_in(b, d) {
                    if dist[n] == usize::MAX {
                        dist[n] = dist[b] + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        None
    }

    /// Every block reaches every other along allowed moves, and no allowed
    /// move leaves the freespace.
    pub fn check_connectivity(&self, grid: &BlockGrid) -> Result<(), PolicyError> {
        for b in 0..grid.num_free() {
            let ok_moves = self.allowed(b).all(|d| grid.neighbor_in(b, d).is_some());
            if !ok_moves || !self.reachable(grid, b).iter().all(|&s| s) {
                let c = grid.cell(b);
                return Err(PolicyError::RulebookDisconnected { i: c.i, j: c.j });
            }
        }
        Ok(())
    }
}

/// Expert choice: the allowed direction with the largest `⟨d, v̄⟩`, ties
/// resolved in the order +x, +y, −x, −y.
pub fn expert_direction(allowed: impl Iterator<Item = Dir>, v_bar: Vec2) -> Dir {
    let mut best: Option<(Dir, f64)> = None;
    for d in allowed {
        let s = d.unit().dot(v_bar);
        let better = match best {
            None => true,
            Some((bd, b)) => s > b || (s == b && d.index() < bd.index()),
        };
        if better {
            best = Some((d, s));
        }
    }
    best.expect("allowed set is nonempty").0
}

/// Lane and roundabout rules on the 2×2 super-cell lattice anchored at the
/// grid origin.
///
/// A super-cell whose only open sides are east and west is a horizontal
/// corridor piece (bottom lane +x, top lane −x); north/south only gives a
/// vertical piece (right lane +y, left lane −y). Every other super-cell
/// (crossings, tees, bends, dead ends) is a counter-clockwise roundabout
/// whose blocks may additionally leave through an open side in the
/// direction of the outgoing lane there.
pub fn derive_rulebook(grid: &BlockGrid) -> Result<Rulebook, PolicyError> {
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let free = |i: isize, j: isize| grid.is_free(i, j);
    let unclassifiable = |c: Cell| PolicyError::UnclassifiableBlock { i: c.i, j: c.j };

    // every super-cell must be entirely free or entirely blocked
    for &c in grid.cells() {
        let (si, sj) = (c.i as isize / 2 * 2, c.j as isize / 2 * 2);
        if si + 1 >= w || sj + 1 >= h {
            return Err(unclassifiable(c));
        }
        if !(free(si, sj) && free(si + 1, sj) && free(si, sj + 1) && free(si + 1, sj + 1)) {
            return Err(unclassifiable(c));
        }
    }

    let mut allowed = vec![0u8; grid.num_free()];
    for (id, &c) in grid.cells().iter().enumerate() {
        let (si, sj) = (c.i as isize / 2 * 2, c.j as isize / 2 * 2);
        let (lx, ly) = (c.i as isize - si, c.j as isize - sj);
        // open sides of the super-cell; a side is open when both facing
        // blocks beyond it are free, and must not be half open
        let side = |a: (isize, isize), b: (isize, isize)| -> Result<bool, PolicyError> {
            match (free(a.0, a.1), free(b.0, b.1)) {
                (true, true) => Ok(true),
                (false, false) => Ok(false),
                _ => Err(unclassifiable(c)),
            }
        };
        let east = side((si + 2, sj), (si + 2, sj + 1))?;
        let west = side((si - 1, sj), (si - 1, sj + 1))?;
        let north = side((si, sj + 2), (si + 1, sj + 2))?;
        let south = side((si, sj - 1), (si + 1, sj - 1))?;

        let mask = if east && west && !north && !south {
            if ly == 0 {
                bit(Dir::PosX)
            } else {
                bit(Dir::NegX)
            }
        } else if north && south && !east && !west {
            if lx == 1 {
                bit(Dir::PosY)
            } else {
                bit(Dir::NegY)
            }
        } else {
            match (lx, ly) {
                (0, 0) => bit(Dir::PosX) | if south { bit(Dir::NegY) } else { 0 },
                (1, 0) => bit(Dir::PosY) | if east { bit(Dir::PosX) } else { 0 },
                (1, 1) => bit(Dir::NegX) | if north { bit(Dir::PosY) } else { 0 },
                _ => bit(Dir::NegY) | if west { bit(Dir::NegX) } else { 0 },
            }
        };
        allowed[id] = mask;
    }
    let rb = Rulebook { allowed };
    rb.check_connectivity(grid)?;
    Ok(rb)
}
