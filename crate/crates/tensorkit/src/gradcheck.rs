//! Central finite differences, used as an oracle for [`crate::Tape::backward`].

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// `(f(θ + ε e_k) - f(θ - ε e_k)) / 2ε` for every coordinate of every parameter.
pub fn finite_diff_gradient<F>(mut f: F, params: &ParamStore, eps: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let [r, c] = params.get(id).shape();
        let mut g = Tensor::zeros(r, c);
        for k in 0..r * c {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = f(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = f(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps coordinates whose true
/// gradient is ~0 from turning rounding noise into a huge ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
