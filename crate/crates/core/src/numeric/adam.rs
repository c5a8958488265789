use super::params::{ParamKind, ParameterSet};
use super::Gradients;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for every trainable entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`; running statistics get empty slots.
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros = |e: &super::params::ParamEntry| match e.kind {
            ParamKind::Trainable => vec![0.0; e.value.len()],
            ParamKind::RunningStatistic => Vec::new(),
        };
        Self { config, step: 0, first: params.iter().map(zeros).collect(), second: params.iter().map(zeros).collect() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// One bias-corrected Adam update of the trainable entries of `params`.
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if learning_rate.is_nan() || learning_rate < 0.0 {
            return Err(Error::config(format!("learning rate {learning_rate} must be non-negative")));
        }
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::contract("gradients, optimizer state and parameters differ in length"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for index in 0..params.len() {
            if params.kind(index) != ParamKind::Trainable {
                continue;
            }
            let grad = grads
                .get(index)
                .ok_or_else(|| Error::contract(format!("missing gradient for `{}`", params.entries()[index].name)))?;
            let value = params.value_mut(index);
            if grad.len() != value.len() || self.first[index].len() != value.len() {
                return Err(Error::contract("gradient shape does not match parameter"));
            }
            let m = &mut self.first[index];
            let v = &mut self.second[index];
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and optimizer state.
pub fn adam_step(
    params: &ParameterSet,
    grads: &Gradients,
    state: &AdamState,
    learning_rate: f64,
) -> Result<(ParameterSet, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.apply(&mut params, grads, learning_rate)?;
    Ok((params, state))
}
