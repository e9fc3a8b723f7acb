//! Dense and LSTM layers over a [`Graph`].
//!
//! Kernels are stored `[out, in]` and may be split into several input
//! blocks, which is equivalent to one kernel over the concatenated input.
//! A block can also be projected ahead of time (for example once per unique
//! saliency frame) and joined later with [`Affine::combine`] or
//! [`LstmLayer::step`].

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Graph, ParamId, ParamSet, Real, Var};
use crate::error::{Error, Result};

/// `y = Σ xᵢ Wᵢᵀ + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weights: Vec<ParamId>,
    pub bias: ParamId,
    pub in_dims: Vec<usize>,
    pub out_dim: usize,
}

impl Affine {
    pub fn new<T: Real>(params: &mut ParamSet<T>, rng: &mut impl Rng, name: &str, in_dims: &[usize], out_dim: usize) -> Self {
        let fan_in: usize = in_dims.iter().sum();
        let weights = in_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| params.add(format!("{name}.w{i}"), glorot_uniform(rng, out_dim, d, fan_in, out_dim)))
            .collect();
        let bias = params.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            weights,
            bias,
            in_dims: in_dims.to_vec(),
            out_dim,
        }
    }

    /// All-zero kernel and bias.
    pub fn zeroed<T: Real>(params: &mut ParamSet<T>, name: &str, in_dims: &[usize], out_dim: usize) -> Self {
        let weights = in_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| params.add(format!("{name}.w{i}"), Array2::zeros((out_dim, d))))
            .collect();
        let bias = params.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            weights,
            bias,
            in_dims: in_dims.to_vec(),
            out_dim,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.weights.clone();
        ids.push(self.bias);
        ids
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, xs: &[Var]) -> Result<Var> {
        if xs.len() != self.weights.len() {
            return Err(Error::Shape(format!("dense layer has {} input blocks, got {}", self.weights.len(), xs.len())));
        }
        let ws: Vec<_> = self.weights.iter().map(|w| g.param(*w)).collect();
        let b = g.param(self.bias);
        g.linear(xs, &ws, Some(b))
    }

    /// `x · W_blockᵀ`, plus the bias when `with_bias`.
    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, block: usize, x: Var, with_bias: bool) -> Result<Var> {
        let w = g.param(self.weights[block]);
        let b = with_bias.then(|| g.param(self.bias));
        g.linear(&[x], &[w], b)
    }

    /// Joins raw blocks `(index, x)` with precomputed projections. When
    /// `projected` is non-empty exactly one of its terms must carry the bias.
    pub fn combine<T: Real>(&self, g: &mut Graph<'_, T>, raw: &[(usize, Var)], projected: &[Var]) -> Result<Var> {
        combine(g, &self.weights, self.bias, raw, projected)
    }
}

fn combine<T: Real>(
    g: &mut Graph<'_, T>,
    weights: &[ParamId],
    bias: ParamId,
    raw: &[(usize, Var)],
    projected: &[Var],
) -> Result<Var> {
    let mut acc = if raw.is_empty() {
        None
    } else {
        let xs: Vec<_> = raw.iter().map(|(_, x)| *x).collect();
        let ws: Vec<_> = raw.iter().map(|(i, _)| g.param(weights[*i])).collect();
        let b = projected.is_empty().then(|| g.param(bias));
        Some(g.linear(&xs, &ws, b)?)
    };
    for p in projected {
        acc = Some(match acc {
            Some(a) => g.add(a, *p)?,
            None => *p,
        });
    }
    acc.ok_or_else(|| Error::Empty("layer called without inputs".into()))
}

/// One LSTM layer, gate order `i, f, g, o`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_kernels: Vec<ParamId>,
    pub recurrent_kernel: ParamId,
    pub bias: ParamId,
    pub in_dims: Vec<usize>,
    pub units: usize,
}

impl LstmLayer {
    pub fn new<T: Real>(params: &mut ParamSet<T>, rng: &mut impl Rng, name: &str, in_dims: &[usize], units: usize) -> Self {
        let fan_in: usize = in_dims.iter().sum();
        let input_kernels = in_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| params.add(format!("{name}.wx{i}"), glorot_uniform(rng, 4 * units, d, fan_in, 4 * units)))
            .collect();
        let recurrent_kernel = params.add(format!("{name}.wh"), glorot_uniform(rng, 4 * units, units, units, 4 * units));
        let mut b = Array2::zeros((1, 4 * units));
        b.slice_mut(ndarray::s![.., units..2 * units]).fill(T::one());
        let bias = params.add(format!("{name}.b"), b);
        Self {
            input_kernels,
            recurrent_kernel,
            bias,
            in_dims: in_dims.to_vec(),
            units,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.input_kernels.clone();
        ids.push(self.recurrent_kernel);
        ids.push(self.bias);
        ids
    }

    /// `x · W_blockᵀ`, plus the bias when `with_bias`.
    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, block: usize, x: Var, with_bias: bool) -> Result<Var> {
        let w = g.param(self.input_kernels[block]);
        let b = with_bias.then(|| g.param(self.bias));
        g.linear(&[x], &[w], b)
    }

    /// Advances `(h, c)` by one step. Inputs follow [`Affine::combine`].
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        raw: &[(usize, Var)],
        projected: &[Var],
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let pre = combine(g, &self.input_kernels, self.bias, raw, projected)?;
        let w = g.param(self.recurrent_kernel);
        g.lstm_cell(pre, h, c, w)
    }
}

/// Per-layer `(h, c)` handles.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Stacked LSTM; layer `k + 1` consumes layer `k`'s hidden output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        in_dims: &[usize],
        units: usize,
        layers: usize,
    ) -> Result<Self> {
        if layers == 0 || units == 0 {
            return Err(Error::InvalidArgument("an LSTM stack needs >= 1 layer of >= 1 unit".into()));
        }
        let layers = (0..layers)
            .map(|k| {
                let dims = if k == 0 { in_dims.to_vec() } else { vec![units] };
                LstmLayer::new(params, rng, &format!("{name}.l{k}"), &dims, units)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn units(&self) -> usize {
        self.layers[0].units
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<'_, T>, batch: usize) -> LstmState {
        let (h, c) = self
            .layers
            .iter()
            .map(|l| (g.input(Array2::zeros((batch, l.units))), g.input(Array2::zeros((batch, l.units)))))
            .unzip();
        LstmState { h, c }
    }

    /// One time step; `raw` and `projected` feed the first layer.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        raw: &[(usize, Var)],
        projected: &[Var],
        state: &LstmState,
    ) -> Result<(LstmState, Var)> {
        let mut h_out = Vec::with_capacity(self.layers.len());
        let mut c_out = Vec::with_capacity(self.layers.len());
        let mut below: Option<Var> = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let (h, c) = match below {
                None => layer.step(g, raw, projected, state.h[k], state.c[k])?,
                Some(x) => layer.step(g, &[(0, x)], &[], state.h[k], state.c[k])?,
            };
            h_out.push(h);
            c_out.push(c);
            below = Some(h);
        }
        let top = below.expect("non-empty stack");
        Ok((LstmState { h: h_out, c: c_out }, top))
    }
}

/// Plain-array LSTM step: `state` holds `(h, c)` per layer, each `[B, u]`.
pub fn lstm_step<T: Real>(
    stack: &LstmStack,
    params: &ParamSet<T>,
    state: &[(Array2<T>, Array2<T>)],
    input: &Array2<T>,
) -> Result<(Vec<(Array2<T>, Array2<T>)>, Array2<T>)> {
    if state.len() != stack.layers.len() {
        return Err(Error::Shape(format!("{} layer states for {} layers", state.len(), stack.layers.len())));
    }
    if stack.layers[0].in_dims.iter().sum::<usize>() != input.ncols() {
        return Err(Error::Shape(format!("input width {} for {:?}", input.ncols(), stack.layers[0].in_dims)));
    }
    let mut g = Graph::new(params);
    let (h, c) = state.iter().map(|(h, c)| (g.input(h.clone()), g.input(c.clone()))).unzip();
    let x = g.input(input.clone());
    let mut raw = Vec::new();
    let mut at = 0;
    for (i, d) in stack.layers[0].in_dims.iter().enumerate() {
        raw.push((i, g.slice_cols(x, at, at + d)?));
        at += d;
    }
    let (next, top) = stack.step(&mut g, &raw, &[], &LstmState { h, c })?;
    let out = next
        .h
        .iter()
        .zip(&next.c)
        .map(|(h, c)| (g.value(*h).to_owned(), g.value(*c).to_owned()))
        .collect();
    Ok((out, g.value(top).to_owned()))
}
