use super::{PolicyError, PolicyNet, HIDDEN, RFU_INPUT};
use crate::geom::Vec2;
use crate::nn::NnError;

/// Default `ε` of the velocity clamp.
pub const CLAMP_EPS: f64 = 1e-6;

/// `v / max{1, (‖v‖ + ε) / v_max}`.
pub fn clamp_velocity(v: Vec2, v_max: f64, eps: f64) -> Vec2 {
    let s = (v.norm() + eps) / v_max;
    if s <= 1.0 {
        return v;
    }
    let mut out = v / s;
    // rounding can leave the result one ulp above the limit
    while out.norm() > v_max {
        out = out * (1.0 - f64::EPSILON);
    }
    out
}

/// Pulls `∂L/∂out` back through [`clamp_velocity`] at input `v`.
pub fn clamp_backward(v: Vec2, v_max: f64, eps: f64, dout: Vec2) -> Vec2 {
    let n = v.norm();
    let s = (n + eps) / v_max;
    if s <= 1.0 {
        return dout;
    }
    // out = v_max v / (n + ε); J = v_max/(n+ε) (I − v vᵀ / (n (n+ε)))
    let c = v_max / (n + eps);
    let proj = v.dot(dout) / (n * (n + eps));
    (dout - v * proj) * c
}

/// Writes the 36-wide RFU input `[h, rel, v̄]`.
pub(crate) fn rfu_input(h: &[f64], rel: Vec2, v_bar: Vec2, out: &mut [f64; RFU_INPUT]) {
    out[..HIDDEN].copy_from_slice(h);
    out[HIDDEN] = rel.x;
    out[HIDDEN + 1] = rel.y;
    out[HIDDEN + 2] = v_bar.x;
    out[HIDDEN + 3] = v_bar.y;
}

/// `clamp(RFU(h, rel, v̄))`.
pub fn rfu_modulate(
    net: &PolicyNet,
    params: &[f64],
    h: &[f64],
    rel: Vec2,
    v_bar: Vec2,
    v_max: f64,
) -> Result<Vec2, PolicyError> {
    if h.len() != HIDDEN {
        return Err(NnError::ShapeMismatch { what: "hidden state", expected: HIDDEN, found: h.len() }.into());
    }
    if params.len() != net.param_count() {
        return Err(NnError::ShapeMismatch { what: "parameters", expected: net.param_count(), found: params.len() }.into());
    }
    let mut input = [0.0; RFU_INPUT];
    rfu_input(h, rel, v_bar, &mut input);
    let mut trace = [0.0; 36 + 32 + 32 + 16 + 2];
    net.rfu.forward_traced(net.rfu_params(params), &input, &mut trace);
    let o = net.rfu.output(&trace);
    Ok(clamp_velocity(Vec2::new(o[0], o[1]), v_max, CLAMP_EPS))
}
