use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::{ParamStore, Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, t: u64) {
        self.step = t;
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &Tensor<T>)> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v))
    }

    pub fn set_moments(&mut self, name: &str, m: Tensor<T>, v: Tensor<T>) {
        self.moments.insert(name.to_string(), (m, v));
    }

    /// One update of every parameter that has an entry in `grads`.
    /// The step counter advances once per call.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<(), TensorError> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch { op: "adam", lhs: p.shape().into(), rhs: g.shape().into() });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pv, mv), vv), gv) in
                p.data_mut().iter_mut().zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut()).zip(g.data())
            {
                let gv = gv.to_f64();
                let m1 = beta1 * mv.to_f64() + (1.0 - beta1) * gv;
                let v1 = beta2 * vv.to_f64() + (1.0 - beta2) * gv * gv;
                *mv = T::from_f64(m1);
                *vv = T::from_f64(v1);
                let mhat = m1 / bc1;
                let vhat = v1 / bc2;
                *pv = T::from_f64(pv.to_f64() - lr * mhat / (libm::sqrt(vhat) + eps));
            }
        }
        Ok(())
    }
}
