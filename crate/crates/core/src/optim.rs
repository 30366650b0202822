//! AdamW: bias-corrected first/second moments with decoupled weight decay
//! applied additively to the adaptive step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient {value} at parameter {index} ({name})")]
    NonFiniteGradient {
        index: usize,
        name: String,
        value: f64,
    },
}

/// Optimizer hyperparameters. Defaults: lr = wd = 0.001, β = (0.9, 0.999),
/// ε = 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> AdamWConfig {
        AdamWConfig {
            learning_rate: 0.001,
            weight_decay: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators plus the step counter.
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> OptimizerState {
        OptimizerState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update in place:
///   m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g²,
///   p ← p − lr·( m̂/(√v̂ + ε) + wd·p )
/// with bias corrections m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ). `name_of` labels the
/// offending tensor if a gradient is non-finite.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    config: &AdamWConfig,
    name_of: impl Fn(usize) -> String,
) -> Result<(), OptimError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient {
            index,
            name: name_of(index),
            value,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate
            * (m_hat / (v_hat.sqrt() + config.eps) + config.weight_decay * params[i]);
    }
    Ok(())
}
