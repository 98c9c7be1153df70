/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Relative error with a floor so that vanishing gradients compare by their
/// absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against central differences of `loss` with step `h`
/// over `coords` (all coordinates when `None`).
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64, coords: Option<&[usize]>) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut p = params.to_vec();
    let mut out = GradCheck { max_rel_error: 0.0, worst_index: None, checked: 0 };
    for &k in coords {
        let orig = p[k];
        p[k] = orig + h;
        let up = loss(&p);
        p[k] = orig - h;
        let down = loss(&p);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[k], numeric);
        out.checked += 1;
        if err > out.max_rel_error || out.worst_index.is_none() {
            out.max_rel_error = out.max_rel_error.max(err);
            out.worst_index = Some(k);
        }
    }
    out
}
