use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction and global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, clip_norm: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Updates taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update in place and returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<f64> {
        let mut sq = 0.0;
        for (name, _) in params.iter() {
            let g = grads.get(name).ok_or_else(|| Error::Config(format!("no gradient for `{name}`")))?;
            let s: f64 = g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum();
            if !s.is_finite() {
                return Err(Error::NonFinite { what: format!("gradient of `{name}`"), step: self.t as usize });
            }
            sq += s;
        }
        let norm = sq.sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (ob1, ob2) = (T::from_f64_lossy(1.0 - self.beta1), T::from_f64_lossy(1.0 - self.beta2));
        let step_size = T::from_f64_lossy(self.lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        let scale = T::from_f64_lossy(scale);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                let gi = gi * scale;
                *mi = b1 * *mi + ob1 * gi;
                *vi = b2 * *vi + ob2 * gi * gi;
                *pi -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
        Ok(norm)
    }

    /// Moment tensors as `adam.m.<name>` / `adam.v.<name>`.
    pub fn export(&self) -> BTreeMap<String, Tensor<T>> {
        let m = self.m.iter().map(|(k, t)| (format!("adam.m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("adam.v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    /// Restores moments written by [`Adam::export`] after `t` updates.
    pub fn import(&mut self, t: u64, tensors: &BTreeMap<String, Tensor<T>>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (k, tensor) in tensors {
            if let Some(name) = k.strip_prefix("adam.m.") {
                self.m.insert(name.to_string(), tensor.clone());
            } else if let Some(name) = k.strip_prefix("adam.v.") {
                self.v.insert(name.to_string(), tensor.clone());
            }
        }
    }
}
