use serde::{Deserialize, Serialize};

use super::NnError;

/// Widest layer supported by the fixed-size backward buffers.
pub const MAX_WIDTH: usize = 256;

/// Dense network shape: `widths[0]` inputs, then one affine layer per
/// following width, ReLU after every layer except (optionally) the last.
///
/// Parameters of layer `l` are stored as the weight matrix in input-major
/// order (`w[i * out + o]`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub relu_last: bool,
}

impl MlpSpec {
    pub fn new(widths: &[usize], relu_last: bool) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| (1..=MAX_WIDTH).contains(&w)), "bad widths {widths:?}");
        Self { widths: widths.to_vec(), relu_last }
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn output_len(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Length of the activation record written by [`forward_traced`](Self::forward_traced).
    pub fn trace_len(&self) -> usize {
        self.widths.iter().sum()
    }

    fn relu_at(&self, layer: usize) -> bool {
        layer + 1 < self.layers() || self.relu_last
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::ShapeMismatch { what: "parameters", expected: self.param_count(), found: params.len() });
        }
        if input.len() != self.input_len() {
            return Err(NnError::ShapeMismatch { what: "input", expected: self.input_len(), found: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(params, input)?;
        let mut trace = vec![0.0; self.trace_len()];
        self.forward_traced(params, input, &mut trace);
        Ok(self.output(&trace).to_vec())
    }

    /// Evaluates the network, recording every layer's input and the output
    /// into `trace`. Shapes are the caller's responsibility.
    pub fn forward_traced(&self, params: &[f64], input: &[f64], trace: &mut [f64]) {
        debug_assert_eq!(trace.len(), self.trace_len());
        trace[..input.len()].copy_from_slice(input);
        let mut p = 0;
        let mut a_off = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (w, rest) = params[p..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            p += n_in * n_out + n_out;
            let (head, tail) = trace.split_at_mut(a_off + n_in);
            let a = &head[a_off..];
            let z = &mut tail[..n_out];
            z.copy_from_slice(b);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let row = &w[i * n_out..(i + 1) * n_out];
                for (zo, &wo) in z.iter_mut().zip(row) {
                    *zo += wo * ai;
                }
            }
            if self.relu_at(l) {
                for zo in z.iter_mut() {
                    if *zo < 0.0 {
                        *zo = 0.0;
                    }
                }
            }
            a_off += n_in;
        }
    }

    pub fn output<'t>(&self, trace: &'t [f64]) -> &'t [f64] {
        &trace[trace.len() - self.output_len()..]
    }

    /// Reverse pass: accumulates `∂L/∂params` into `grad` given `∂L/∂output`,
    /// and optionally writes `∂L/∂input` into `din`. ReLU passes no gradient
    /// where its output is zero.
    pub fn backward(&self, params: &[f64], trace: &[f64], dout: &[f64], grad: &mut [f64], din: Option<&mut [f64]>) {
        let mut delta = [0.0f64; MAX_WIDTH];
        let mut prev = [0.0f64; MAX_WIDTH];
        let n_last = self.output_len();
        delta[..n_last].copy_from_slice(dout);
        let mut a_off = self.trace_len() - n_last;
        let mut p_end = self.param_count();
        let mut din = din;
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let out = &trace[a_off..a_off + n_out];
            let a_in = &trace[a_off - n_in..a_off];
            if self.relu_at(l) {
                for (d, &o) in delta[..n_out].iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let p0 = p_end - (n_in * n_out + n_out);
            let (gw, gb) = grad[p0..p_end].split_at_mut(n_in * n_out);
            let w = &params[p0..p0 + n_in * n_out];
            let d = &delta[..n_out];
            for (g, &dv) in gb.iter_mut().zip(d) {
                *g += dv;
            }
            let need_prev = l > 0 || din.is_some();
            for i in 0..n_in {
                let ai = a_in[i];
                let grow = &mut gw[i * n_out..(i + 1) * n_out];
                if ai != 0.0 {
                    for (g, &dv) in grow.iter_mut().zip(d) {
                        *g += ai * dv;
                    }
                }
                if need_prev {
                    let wrow = &w[i * n_out..(i + 1) * n_out];
                    prev[i] = wrow.iter().zip(d).map(|(wv, dv)| wv * dv).sum();
                }
            }
            if l == 0 {
                if let Some(out) = din.take() {
                    out.copy_from_slice(&prev[..n_in]);
                }
            }
            delta[..n_in].copy_from_slice(&prev[..n_in]);
            a_off -= n_in;
            p_end = p0;
        }
    }
}
