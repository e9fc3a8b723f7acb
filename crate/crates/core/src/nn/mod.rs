//! Recurrent-network substrate: parameters, a differentiable tape, dense and
//! LSTM layers, Adam, and a versioned checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, TensorInfo, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport, LossFn};
pub use graph::{Grads, Graph, Var};
pub use layers::{lstm_step, Affine, LstmLayer, LstmStack, LstmState};
pub use optim::{Adam, AdamConfig};

/// Floating-point element type of parameters and activations.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Index of a tensor within a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors; biases are stored as `[1, n]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| U::of(x.to_f64().expect("finite parameter"))))
                .collect(),
        }
    }

    pub fn zero(&mut self, id: ParamId) {
        self.values[id.0].fill(T::zero());
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.names.iter().zip(&self.values) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("parameter `{name}` is not finite")));
            }
        }
        Ok(())
    }
}

/// Uniform Glorot kernel `[fan_out, fan_in]` with the given fans.
pub fn glorot_uniform<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-limit..=limit)))
}

/// Loss used for every model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    MseXyz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Probability of feeding the true previous position to the decoder.
    pub scheduled_sampling: f64,
    /// Keep one window in `window_stride` (per trace, in time order).
    pub window_stride: usize,
    /// Seconds skipped at the start of each trace.
    pub t_start: f64,
    /// Turn each batch about the polar axis by a random whole number of
    /// grid columns (positions and frames together).
    pub longitude_augmentation: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-sized defaults: 50 epochs, batch 32, longitude augmentation.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 5e-4,
            seed: 0,
            loss: Loss::MseXyz,
            clip_norm: None,
            scheduled_sampling: 0.0,
            window_stride: 1,
            t_start: 6.0,
            longitude_augmentation: true,
            adam: AdamConfig::default(),
        }
    }

    /// 500 epochs, batch 128, learning rate 5e-4, no augmentation.
    pub fn paper() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            longitude_augmentation: false,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::InvalidArgument("epochs, batch_size and window_stride must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.scheduled_sampling) {
            return Err(Error::InvalidArgument("scheduled_sampling must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean squared 3D error and its gradient with respect to `pred`.
pub fn mse_xyz_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Empty("mse needs equal, non-empty sequences".into()));
    }
    let n = (pred.len() * 3) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let mut g = [0.0; 3];
            for k in 0..3 {
                let d = p[k] - t[k];
                loss += d * d;
                g[k] = 2.0 * d / n;
            }
            g
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests;
