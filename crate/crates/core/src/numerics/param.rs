use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam hyperparameters. Weight decay is decoupled from the moment estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            weight_decay: 0.02,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if !in_unit(self.beta1) {
            return Err(Error::invalid("beta1", "must lie in (0, 1)"));
        }
        if !in_unit(self.beta2) {
            return Err(Error::invalid("beta2", "must lie in (0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// A learnable tensor together with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<T> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    pub adam_m: Matrix<T>,
    pub adam_v: Matrix<T>,
    pub step_count: u64,
}

impl<T: Scalar> ParamBlock<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        ParamBlock {
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate(&mut self, g: &Matrix<T>) -> Result<()> {
        self.grad.add_assign(g)
    }

    /// One bias-corrected Adam update with decoupled weight decay; clears the gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = T::of(cfg.learning_rate);
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let eps = T::of(cfg.epsilon);
        let one = T::one();
        let decay = one - lr * T::of(cfg.weight_decay);
        let bias1 = one - b1.powi(t);
        let bias2_sqrt = (one - b2.powi(t)).sqrt();
        let step_size = lr / bias1;

        let values = self.value.as_mut_slice();
        let grads = self.grad.as_mut_slice();
        let ms = self.adam_m.as_mut_slice();
        let vs = self.adam_v.as_mut_slice();
        for i in 0..values.len() {
            let g = grads[i];
            values[i] *= decay;
            ms[i] = b1 * ms[i] + (one - b1) * g;
            vs[i] = b2 * vs[i] + (one - b2) * g * g;
            let denom = vs[i].sqrt() / bias2_sqrt + eps;
            values[i] -= step_size * ms[i] / denom;
            grads[i] = T::zero();
        }
    }
}
