use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter block of one model.
///
/// Moments are allocated lazily on the first step from the block shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Current learning rate; starts at `config.lr` and is lowered by schedulers.
    pub lr: f64,
    pub t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            lr: config.lr,
            config,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of `params` from `grads`.
///
/// Nothing is modified when any gradient entry is non-finite.
pub fn adam_step<P: Parameterized>(state: &mut AdamState, params: &mut P, grads: &P) -> Result<()> {
    let grad_blocks = grads.blocks();
    for (name, g) in &grad_blocks {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }
    let mut param_blocks = params.blocks_mut();
    if param_blocks.len() != grad_blocks.len() {
        return Err(Error::dim("adam blocks", param_blocks.len(), grad_blocks.len()));
    }
    for ((name, p), (_, g)) in param_blocks.iter().zip(&grad_blocks) {
        if p.len() != g.len() {
            return Err(Error::dim(format!("adam block `{name}`"), p.len(), g.len()));
        }
    }
    if state.first.is_empty() {
        state.first = grad_blocks.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        state.second = state.first.clone();
    }

    state.t += 1;
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let lr = state.lr;

    for (b, ((_, p), (_, g))) in param_blocks.iter_mut().zip(&grad_blocks).enumerate() {
        let m = &mut state.first[b];
        let v = &mut state.second[b];
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
