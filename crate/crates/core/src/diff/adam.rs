use crate::error::{Error, Result};

use super::params::ParamStore;
use super::real::Real;
use super::tensor::Tensor;

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

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// One bias-corrected Adam update of `param` in place. `t` counts from 1.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    moments: &mut Moments<T>,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("adam step counter starts at 1".into()));
    }
    for other in [grad, &moments.m, &moments.v] {
        if other.shape() != param.shape() {
            return Err(Error::shape("adam_step", param.shape(), other.shape()));
        }
    }
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = T::from_f64_lossy(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);
    let Moments { m, v } = moments;
    for (((w, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| Moments {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            })
            .collect();
        Adam {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} tensors, store has {}",
                self.moments.len(),
                store.len()
            )));
        }
        self.step += 1;
        for (p, mom) in store.iter_mut().zip(self.moments.iter_mut()) {
            adam_step(&mut p.value, &p.grad, mom, &self.config, self.step)?;
        }
        store.zero_grad();
        Ok(())
    }
}
