use super::{Gradients, Network};
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
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let n = net.param_count();
        AdamState {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let n = net.param_count();
    for (ctx, len) in [
        ("adam gradients", grads.len()),
        ("adam moments", state.m.len()),
    ] {
        if len != n {
            return Err(Error::Shape {
                context: ctx,
                expected: n,
                actual: len,
            });
        }
    }
    let g = grads.as_slice();
    if let Some(block) = net
        .blocks()
        .iter()
        .find(|b| g[b.range()].iter().any(|v| !v.is_finite()))
    {
        return Err(Error::TrainingDivergence(format!(
            "gradient block {}",
            block.name
        )));
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let params = net.params_mut();
    for i in 0..n {
        let gi = g[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gi;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
