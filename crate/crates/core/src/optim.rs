//! AdamW with decoupled weight decay.

use alloc::vec::Vec;

use crate::autograd::{ParamId, ParamStore};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamWConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let m: Vec<Tensor> = params
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).value().shape()))
            .collect();
        AdamW {
            config,
            v: m.clone(),
            m,
            params,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    /// One update of every owned parameter, then zeroes their gradients.
    /// Fails without touching anything if a parameter has no gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(&id) = self.params.iter().find(|&&id| !store.get(id).has_grad()) {
            return Err(Error::UninitializedGradient(store.get(id).name().into()));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        for (k, &id) in self.params.iter().enumerate() {
            let p = store.get_mut(id);
            let g = p.grad().data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let theta = p.value_mut().data_mut();
            for i in 0..theta.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= c.learning_rate
                    * (m_hat / (libm::sqrt(v_hat) + c.eps) + c.weight_decay * theta[i]);
            }
        }
        for &id in &self.params {
            store.clear_grad(id);
        }
        Ok(())
    }
}
