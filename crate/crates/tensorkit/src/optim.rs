use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter in a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr` (pass
/// `state.config.lr` for a constant schedule). Parameters without a gradient
/// are treated as having a zero gradient.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(TensorError::Invalid(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    // validate before touching anything so a bad gradient leaves params intact
    for id in params.ids() {
        if let Some(g) = grads.param(id) {
            if g.shape() != params.get(id).shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: params.get(id).shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for id in params.ids() {
        let m = &mut state.first[id.0];
        let v = &mut state.second[id.0];
        let p = params.get_mut(id);
        let g = grads.param(id);
        for k in 0..p.len() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            let mk = beta1 * m.data()[k] + (1.0 - beta1) * gk;
            let vk = beta2 * v.data()[k] + (1.0 - beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + eps);
            p.data_mut()[k] -= update;
        }
    }
    Ok(())
}
