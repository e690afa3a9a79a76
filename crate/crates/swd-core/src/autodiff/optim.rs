//! SGD-with-momentum and Adam parameter updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::autodiff::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// Per-parameter-group optimizer state.
///
/// Moment buffers are shape-congruent with their parameters; the step
/// counter increases by exactly 1 per [`OptimizerState::step`]. Weight
/// decay is coupled: it is added to the gradient before the update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Momentum SGD with the classic fixed momentum of 0.9.
    pub fn sgd_momentum(learning_rate: f64, weight_decay: f64, param_sizes: &[usize]) -> Result<Self> {
        Self::validate_hypers(learning_rate, weight_decay)?;
        Ok(OptimizerState {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: Vec::new(),
        })
    }

    /// Adam with betas 0.9/0.999 and epsilon 1e-8.
    pub fn adam(learning_rate: f64, weight_decay: f64, param_sizes: &[usize]) -> Result<Self> {
        Self::validate_hypers(learning_rate, weight_decay)?;
        Ok(OptimizerState {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn new(
        kind: OptimizerKind,
        learning_rate: f64,
        weight_decay: f64,
        param_sizes: &[usize],
    ) -> Result<Self> {
        match kind {
            OptimizerKind::SgdMomentum => Self::sgd_momentum(learning_rate, weight_decay, param_sizes),
            OptimizerKind::Adam => Self::adam(learning_rate, weight_decay, param_sizes),
        }
    }

    fn validate_hypers(learning_rate: f64, weight_decay: f64) -> Result<()> {
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::Argument(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(Error::Argument(format!(
                "weight decay must be non-negative and finite, got {weight_decay}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update to every parameter in the group. `grads[i]`
    /// must be shape-congruent with `params[i]`. Deterministic given
    /// the state.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer group has {} parameters, got {} params / {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, param) in params.iter().enumerate() {
            if param.len() != self.first_moment[i].len() || grads[i].len() != param.len() {
                return Err(Error::Shape(format!(
                    "parameter {i}: state size {}, param size {}, grad size {}",
                    self.first_moment[i].len(),
                    param.len(),
                    grads[i].len()
                )));
            }
        }
        self.step_count += 1;
        for (i, param) in params.iter_mut().enumerate() {
            let values = param.values_mut();
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    let buf = &mut self.first_moment[i];
                    for j in 0..values.len() {
                        let g = grads[i][j] + self.weight_decay * values[j];
                        buf[j] = self.momentum * buf[j] + g;
                        values[j] -= self.learning_rate * buf[j];
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
                    let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
                    for j in 0..values.len() {
                        let g = grads[i][j] + self.weight_decay * values[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        values[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
            ensure_finite(values, "optimizer step")?;
        }
        Ok(())
    }
}
