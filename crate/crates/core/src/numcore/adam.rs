use alloc::collections::BTreeMap;
use alloc::string::String;

use super::{NumError, ParamSet, Tensor};
use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<(), NumError> {
        params.check_compatible(grads)?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let names: alloc::vec::Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = &grads[&name];
            let m = self.m.get_mut(&name).ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            }
            let v = self.v.get_mut(&name).ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(&name).unwrap(), self.v.get(&name).unwrap());
            let p = params.get_mut(&name).unwrap();
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= c.lr * mhat / (sqrt(vhat) + c.eps);
            }
        }
        Ok(())
    }
}
