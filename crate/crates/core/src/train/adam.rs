//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, hp: &AdamParams) {
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        if m != 0.0 {
            params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + hp.eps);
        }
    }
}
