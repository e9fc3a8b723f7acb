use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.values().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient aborts before any tensor changes.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if grads.tensors.len() != params.len() {
            return Err(Error::Shape("gradient count differs from parameter count".into()));
        }
        for (i, g) in grads.tensors.iter().enumerate() {
            if g.dim() != params.values()[i].dim() {
                return Err(Error::Shape(format!("gradient shape for `{}`", params.names()[i])));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(params.names()[i].clone()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(epsilon);
        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            });
        }
        Ok(())
    }
}
