use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::arch::NetworkParams;
use crate::error::{Error, Result};

/// RMSprop with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
    /// Running mean of squared gradients, one buffer per trainable tensor.
    pub cache: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &NetworkParams, decay: f64, momentum: f64, epsilon: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            decay,
            momentum,
            epsilon,
            cache: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) -> Result<()> {
        let g = grads.tensors();
        if let Some(i) = g.iter().position(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient(i));
        }
        let mut theta = params.tensors_mut();
        if theta.len() != g.len() || theta.len() != self.cache.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        for (i, t) in theta.iter_mut().enumerate() {
            rmsprop_update(
                t,
                g[i],
                &mut self.cache[i],
                &mut self.velocity[i],
                lr,
                self.decay,
                self.momentum,
                self.epsilon,
            );
        }
        Ok(())
    }
}

/// Element-wise update:
/// `cache = rho*cache + (1-rho)*g^2; v = m*v - lr*g/sqrt(cache+eps); theta += v`.
#[allow(clippy::too_many_arguments)]
pub fn rmsprop_update(
    theta: &mut [f64],
    grad: &[f64],
    cache: &mut [f64],
    velocity: &mut [f64],
    lr: f64,
    decay: f64,
    momentum: f64,
    epsilon: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        cache[i] = decay * cache[i] + (1.0 - decay) * g * g;
        let denom = (cache[i] + epsilon).sqrt();
        let step = if denom > 0.0 { lr * g / denom } else { 0.0 };
        velocity[i] = momentum * velocity[i] - step;
        theta[i] += velocity[i];
    }
}
