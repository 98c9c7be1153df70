use std::cell::Cell as StdCell;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Aggregation, PolicyNet, HIDDEN};
use crate::env::{BlockGrid, Dir, DIRS};

thread_local! {
    static INFER_CALLS: StdCell<u64> = const { StdCell::new(0) };
}

/// Number of hidden-field inferences run on the current thread.
pub fn grnn_infer_count() -> u64 {
    INFER_CALLS.with(|c| c.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrnnConfig {
    /// Number of synchronous update sweeps; `None` uses `width + height`.
    pub k: Option<usize>,
}

impl Default for GrnnConfig {
    fn default() -> Self {
        Self { k: None }
    }
}

impl GrnnConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k: Some(k) }
    }

    pub fn sweeps(&self, grid: &BlockGrid) -> usize {
        self.k.unwrap_or(grid.width() + grid.height())
    }
}

/// Converged per-block hidden states `h^K`, indexed by dense block id.
#[derive(Debug)]
pub struct HiddenField {
    k: usize,
    states: Vec<f64>,
    reads: AtomicU64,
}

impl Clone for HiddenField {
    fn clone(&self) -> Self {
        Self { k: self.k, states: self.states.clone(), reads: AtomicU64::new(0) }
    }
}

impl PartialEq for HiddenField {
    fn eq(&self, o: &Self) -> bool {
        self.k == o.k && self.states == o.states
    }
}

impl HiddenField {
    pub fn sweeps(&self) -> usize {
        self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.states.len() / HIDDEN
    }

    /// Hidden state of block `id`. Counted, so callers can verify that a
    /// query touches a single block.
    pub fn state(&self, id: usize) -> &[f64] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.states[id * HIDDEN..(id + 1) * HIDDEN]
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn raw(&self) -> &[f64] {
        &self.states
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }

    /// Diagnostic export in block order (row-major over the grid).
    pub fn export(&self, grid: &BlockGrid) -> HiddenFieldFile {
        HiddenFieldFile {
            format_version: 1,
            width: grid.width(),
            height: grid.height(),
            k: self.k,
            blocks: grid
                .cells()
                .iter()
                .enumerate()
                .map(|(id, c)| BlockState { i: c.i, j: c.j, h: self.states[id * HIDDEN..(id + 1) * HIDDEN].to_vec() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub i: usize,
    pub j: usize,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenFieldFile {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub blocks: Vec<BlockState>,
}

/// Directed message edges `(receiver, sender, direction receiver→sender)`,
/// grouped by receiver.
fn message_edges(grid: &BlockGrid) -> Vec<(usize, usize, Dir)> {
    let mut edges = Vec::new();
    for b in 0..grid.num_free() {
        for d in DIRS {
            if let Some(n) = grid.neighbor_in(b, d) {
                edges.push((b, n, d));
            }
        }
    }
    edges
}

/// Intermediate values of a K-sweep inference, kept for the reverse pass.
pub struct GrnnTrace {
    k: usize,
    n: usize,
    edges: Vec<(usize, usize, Dir)>,
    /// `h^0 … h^K`, each `n × HIDDEN`.
    h: Vec<f64>,
    econv: Vec<f64>,
    update: Vec<f64>,
}

impl GrnnTrace {
    pub fn field(&self) -> HiddenField {
        let last = self.k * self.n * HIDDEN;
        HiddenField { k: self.k, states: self.h[last..last + self.n * HIDDEN].to_vec(), reads: AtomicU64::new(0) }
    }

    pub fn final_states(&self) -> &[f64] {
        let last = self.k * self.n * HIDDEN;
        &self.h[last..last + self.n * HIDDEN]
    }
}

/// `h^{k+1}_b = H(h^k_b, ⊕_{n∈N(b)} EConv(x_b − x_n, h^k_n))` from `h^0 = 0`,
/// all blocks updated from the level-`k` states (Jacobi order).
pub fn grnn_infer(net: &PolicyNet, params: &[f64], grid: &BlockGrid, cfg: &GrnnConfig) -> HiddenField {
    INFER_CALLS.with(|c| c.set(c.get() + 1));
    grnn_forward(net, params, grid, cfg.sweeps(grid), false).field()
}

/// Inference that keeps every activation for [`grnn_backward`].
pub fn grnn_forward_traced(net: &PolicyNet, params: &[f64], grid: &BlockGrid, cfg: &GrnnConfig) -> GrnnTrace {
    grnn_forward(net, params, grid, cfg.sweeps(grid), true)
}

fn grnn_forward(net: &PolicyNet, params: &[f64], grid: &BlockGrid, k: usize, keep: bool) -> GrnnTrace {
    let n = grid.num_free();
    let edges = message_edges(grid);
    let (pe, ph) = (net.econv_params(params), net.update_params(params));
    let (te, th) = (net.econv.trace_len(), net.update.trace_len());
    let agg_w = net.aggregate_width();
    let mut h = vec![0.0; (k + 1) * n * HIDDEN];
    let mut econv = vec![0.0; if keep { k * edges.len() * te } else { te }];
    let mut update = vec![0.0; if keep { k * n * th } else { th }];
    let mut input_e = [0.0; 2 + HIDDEN];
    let mut input_h = vec![0.0; HIDDEN + agg_w];
    let mut agg = vec![0.0; n * agg_w];
    for step in 0..k {
        let (done, next) = h.split_at_mut((step + 1) * n * HIDDEN);
        let cur = &done[step * n * HIDDEN..];
        let next = &mut next[..n * HIDDEN];
        agg.fill(0.0);
        for (e, &(recv, send, dir)) in edges.iter().enumerate() {
            let (dx, dy) = dir.offset();
            // x_recv − x_send: the sender lies at recv + offset.
            input_e[0] = -(dx as f64);
            input_e[1] = -(dy as f64);
            input_e[2..].copy_from_slice(&cur[send * HIDDEN..(send + 1) * HIDDEN]);
            let slot = if keep { (step * edges.len() + e) * te } else { 0 };
            let tr = &mut econv[slot..slot + te];
            net.econv.forward_traced(pe, &input_e, tr);
            let msg = net.econv.output(tr);
            let dst = match net.aggregation {
                Aggregation::Sum => &mut agg[recv * agg_w..(recv + 1) * agg_w],
                Aggregation::Concat => {
                    let base = recv * agg_w + dir.index() * HIDDEN;
                    &mut agg[base..base + HIDDEN]
                }
            };
            for (a, m) in dst.iter_mut().zip(msg) {
                *a += m;
            }
        }
        for b in 0..n {
            input_h[..HIDDEN].copy_from_slice(&cur[b * HIDDEN..(b + 1) * HIDDEN]);
            input_h[HIDDEN..].copy_from_slice(&agg[b * agg_w..(b + 1) * agg_w]);
            let slot = if keep { (step * n + b) * th } else { 0 };
            let tr = &mut update[slot..slot + th];
            net.update.forward_traced(ph, &input_h, tr);
            next[b * HIDDEN..(b + 1) * HIDDEN].copy_from_slice(net.update.output(tr));
        }
    }
    if !keep {
        // Only the final level is needed.
        let tail = h[k * n * HIDDEN..].to_vec();
        h = vec![0.0; k * n * HIDDEN];
        h.extend_from_slice(&tail);
    }
    GrnnTrace { k, n, edges, h, econv, update }
}

/// Back-propagates `d_final` (∂L/∂h^K, `n × HIDDEN`) through the unrolled
/// sweeps, accumulating parameter gradients into `grad` (full policy layout).
pub fn grnn_backward(net: &PolicyNet, params: &[f64], trace: &GrnnTrace, d_final: &[f64], grad: &mut [f64]) {
    let n = trace.n;
    let (te, th) = (net.econv.trace_len(), net.update.trace_len());
    let agg_w = net.aggregate_width();
    let (pe, ph) = (net.econv_params(params), net.update_params(params));
    let (ge_range, gh_range) = (net.econv_range(), net.update_range());
    let mut d_next = d_final.to_vec();
    let mut d_cur = vec![0.0; n * HIDDEN];
    let mut d_agg = vec![0.0; n * agg_w];
    let mut din_h = vec![0.0; HIDDEN + agg_w];
    let mut din_e = [0.0; 2 + HIDDEN];
    for step in (0..trace.k).rev() {
        d_cur.fill(0.0);
        for b in 0..n {
            let dout = &d_next[b * HIDDEN..(b + 1) * HIDDEN];
            if dout.iter().all(|&v| v == 0.0) {
                d_agg[b * agg_w..(b + 1) * agg_w].fill(0.0);
                continue;
            }
            let tr = &trace.update[(step * n + b) * th..(step * n + b + 1) * th];
            net.update.backward(ph, tr, dout, &mut grad[gh_range.clone()], Some(&mut din_h));
            for (d, v) in d_cur[b * HIDDEN..(b + 1) * HIDDEN].iter_mut().zip(&din_h[..HIDDEN]) {
                *d += v;
            }
            d_agg[b * agg_w..(b + 1) * agg_w].copy_from_slice(&din_h[HIDDEN..]);
        }
        if step == 0 {
            // h^0 is a constant; only parameter gradients remain to collect.
            for (e, &(recv, _, dir)) in trace.edges.iter().enumerate() {
                let dm = agg_slice(&d_agg, net.aggregation, agg_w, recv, dir);
                if dm.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let tr = &trace.econv[(step * trace.edges.len() + e) * te..(step * trace.edges.len() + e + 1) * te];
                net.econv.backward(pe, tr, dm, &mut grad[ge_range.clone()], None);
            }
            break;
        }
        for (e, &(recv, send, dir)) in trace.edges.iter().enumerate() {
            let dm = agg_slice(&d_agg, net.aggregation, agg_w, recv, dir);
            if dm.iter().all(|&v| v == 0.0) {
                continue;
            }
            let tr = &trace.econv[(step * trace.edges.len() + e) * te..(step * trace.edges.len() + e + 1) * te];
            net.econv.backward(pe, tr, dm, &mut grad[ge_range.clone()], Some(&mut din_e));
            for (d, v) in d_cur[send * HIDDEN..(send + 1) * HIDDEN].iter_mut().zip(&din_e[2..]) {
                *d += v;
            }
        }
        std::mem::swap(&mut d_next, &mut d_cur);
    }
}

fn agg_slice(d_agg: &[f64], mode: Aggregation, agg_w: usize, recv: usize, dir: Dir) -> &[f64] {
    match mode {
        Aggregation::Sum => &d_agg[recv * agg_w..(recv + 1) * agg_w],
        Aggregation::Concat => {
            let base = recv * agg_w + dir.index() * HIDDEN;
            &d_agg[base..base + HIDDEN]
        }
    }
}
