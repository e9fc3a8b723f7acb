//! Tape-based reverse-mode differentiation over batch-major matrices.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::{ParamId, ParamSet, Real};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    /// `Σ xᵢ · wᵢᵀ + b`, each `wᵢ` shaped `[out, inᵢ]`, `b` shaped `[1, out]`.
    Linear {
        xs: Vec<Var>,
        ws: Vec<Var>,
        b: Option<Var>,
    },
    Add(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    /// Output `[h | c]`; caches activated gates `[i, f, g, o]` and `tanh(c)`.
    LstmCell {
        pre: Var,
        h: Var,
        c: Var,
        w: Var,
        gates: Array2<T>,
        tanh_c: Array2<T>,
    },
    /// Mean of squared differences over every element of every pair.
    Mse {
        preds: Vec<Var>,
        targets: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node<T> {
    /// `None` for parameters, whose value lives in the parameter set.
    value: Option<Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass; parameters are borrowed, never copied.
pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Parameter gradients, one per tensor of the parameter set.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub tensors: Vec<Array2<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            tensors: params.values().iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.tensors[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a.view(),
            (None, Op::Param(id)) => self.params.get(*id).view(),
            _ => unreachable!("only parameter nodes are stored by reference"),
        }
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn linear(&mut self, xs: &[Var], ws: &[Var], b: Option<Var>) -> Result<Var> {
        if xs.len() != ws.len() || xs.is_empty() {
            return Err(Error::Shape("linear needs one kernel per input block".into()));
        }
        let rows = self.value(xs[0]).nrows();
        let out = self.value(ws[0]).nrows();
        let mut y = Array2::<T>::zeros((rows, out));
        for (x, w) in xs.iter().zip(ws) {
            let (xv, wv) = (self.value(*x), self.value(*w));
            if xv.nrows() != rows || wv.nrows() != out || xv.ncols() != wv.ncols() {
                return Err(Error::Shape(format!(
                    "linear block {:?} · {:?}ᵀ into {:?}",
                    xv.dim(),
                    wv.dim(),
                    (rows, out)
                )));
            }
            ndarray::linalg::general_mat_mul(T::one(), &xv, &wv.t(), T::one(), &mut y);
        }
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.dim() != (1, out) {
                return Err(Error::Shape(format!("bias {:?} for width {out}", bv.dim())));
            }
            y += &bv;
        }
        let needs = xs.iter().chain(ws).chain(b.iter()).any(|v| self.needs(*v));
        Ok(self.push(
            y,
            Op::Linear {
                xs: xs.to_vec(),
                ws: ws.to_vec(),
                b,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(Error::Shape(format!("add {:?} + {:?}", av.dim(), bv.dim())));
        }
        let y = &av + &bv;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.ncols() {
            return Err(Error::Shape(format!("columns {start}..{end} of {:?}", xv.dim())));
        }
        let y = xv.slice(s![.., start..end]).to_owned();
        let needs = self.needs(x);
        Ok(self.push(y, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let views: Vec<_> = xs.iter().map(|v| self.value(*v)).collect();
        let y = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let needs = xs.iter().any(|v| self.needs(*v));
        Ok(self.push(y, Op::ConcatCols(xs.to_vec()), needs))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= xv.nrows()) {
            return Err(Error::Shape(format!("row {bad} of {:?}", xv.dim())));
        }
        let y = xv.select(Axis(0), idx);
        let needs = self.needs(x);
        Ok(self.push(y, Op::GatherRows { x, idx: idx.to_vec() }, needs))
    }

    /// LSTM cell on pre-activations `pre = Σ x·Wᵀ + b` (`[B, 4u]`, gate
    /// order `i, f, g, o`) and recurrent kernel `w` (`[4u, u]`). Returns
    /// `(h, c)`.
    pub fn lstm_cell(&mut self, pre: Var, h: Var, c: Var, w: Var) -> Result<(Var, Var)> {
        let (pv, hv, cv, wv) = (self.value(pre), self.value(h), self.value(c), self.value(w));
        let (b, u) = hv.dim();
        if pv.dim() != (b, 4 * u) || cv.dim() != (b, u) || wv.dim() != (4 * u, u) {
            return Err(Error::Shape(format!(
                "lstm cell pre {:?} h {:?} c {:?} w {:?}",
                pv.dim(),
                hv.dim(),
                cv.dim(),
                wv.dim()
            )));
        }
        let mut z = pv.to_owned();
        ndarray::linalg::general_mat_mul(T::one(), &hv, &wv.t(), T::one(), &mut z);
        {
            let (mut ifg, mut o) = z.view_mut().split_at(Axis(1), 3 * u);
            let (mut i_f, mut g) = ifg.view_mut().split_at(Axis(1), 2 * u);
            i_f.mapv_inplace(|v| sigmoid(v));
            g.mapv_inplace(|v| v.tanh());
            o.mapv_inplace(|v| sigmoid(v));
        }
        let gates = z;
        let mut out = Array2::<T>::zeros((b, 2 * u));
        let mut tanh_c = Array2::<T>::zeros((b, u));
        for r in 0..b {
            for k in 0..u {
                let (i, f, g, o) = (gates[[r, k]], gates[[r, u + k]], gates[[r, 2 * u + k]], gates[[r, 3 * u + k]]);
                let c_new = f * cv[[r, k]] + i * g;
                let tc = c_new.tanh();
                tanh_c[[r, k]] = tc;
                out[[r, k]] = o * tc;
                out[[r, u + k]] = c_new;
            }
        }
        let needs = [pre, h, c, w].iter().any(|v| self.needs(*v));
        let cell = self.push(
            out,
            Op::LstmCell {
                pre,
                h,
                c,
                w,
                gates,
                tanh_c,
            },
            needs,
        );
        let h_new = self.slice_cols(cell, 0, u)?;
        let c_new = self.slice_cols(cell, u, 2 * u)?;
        Ok((h_new, c_new))
    }

    /// Mean squared error over all elements of all `(pred, target)` pairs,
    /// a `[1, 1]` node.
    pub fn mse(&mut self, preds: &[Var], targets: &[Var]) -> Result<Var> {
        if preds.is_empty() || preds.len() != targets.len() {
            return Err(Error::Empty("mse needs equal, non-empty prediction and target lists".into()));
        }
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (p, t) in preds.iter().zip(targets) {
            let (pv, tv) = (self.value(*p), self.value(*t));
            if pv.dim() != tv.dim() {
                return Err(Error::Shape(format!("mse {:?} vs {:?}", pv.dim(), tv.dim())));
            }
            Zip::from(&pv).and(&tv).for_each(|a, b| {
                let d = (*a - *b).to_f64().unwrap_or(f64::NAN);
                total += d * d;
            });
            count += pv.len();
        }
        if count == 0 {
            return Err(Error::Empty("mse over zero elements".into()));
        }
        let loss = T::from(total / count as f64).unwrap_or_else(T::nan);
        let needs = preds.iter().chain(targets).any(|v| self.needs(*v));
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::Mse {
                preds: preds.to_vec(),
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut out = Grads::zeros_like(self.params);
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.tensors[id.0] += &gy,
                Op::Linear { xs, ws, b } => {
                    for (x, w) in xs.iter().zip(ws) {
                        if self.needs(*x) {
                            let dx = gy.dot(&self.value(*w));
                            accumulate(&mut grads, *x, dx);
                        }
                        if self.needs(*w) {
                            let dw = gy.t().dot(&self.value(*x));
                            accumulate(&mut grads, *w, dw);
                        }
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            let db = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                            accumulate(&mut grads, *b, db);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, gy.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, gy);
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let end = start + gy.ncols();
                    let entry = grads[x.0].get_or_insert_with(|| Array2::zeros(xv.raw_dim()));
                    let mut dst = entry.slice_mut(s![.., *start..end]);
                    dst += &gy;
                }
                Op::ConcatCols(xs) => {
                    let mut at = 0;
                    for x in xs {
                        let w = self.value(*x).ncols();
                        if self.needs(*x) {
                            accumulate(&mut grads, *x, gy.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.value(*x);
                    let entry = grads[x.0].get_or_insert_with(|| Array2::zeros(xv.raw_dim()));
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = entry.row_mut(src);
                        dst += &gy.row(r);
                    }
                }
                Op::LstmCell {
                    pre,
                    h,
                    c,
                    w,
                    gates,
                    tanh_c,
                } => {
                    let (b, u) = tanh_c.dim();
                    let c_prev = self.value(*c);
                    let one = T::one();
                    let mut dz = Array2::<T>::zeros((b, 4 * u));
                    let mut dc_prev = Array2::<T>::zeros((b, u));
                    for r in 0..b {
                        for k in 0..u {
                            let (ig, fg, gg, og) =
                                (gates[[r, k]], gates[[r, u + k]], gates[[r, 2 * u + k]], gates[[r, 3 * u + k]]);
                            let tc = tanh_c[[r, k]];
                            let dh = gy[[r, k]];
                            let dc = gy[[r, u + k]] + dh * og * (one - tc * tc);
                            let d_o = dh * tc;
                            let d_i = dc * gg;
                            let d_g = dc * ig;
                            let d_f = dc * c_prev[[r, k]];
                            dc_prev[[r, k]] = dc * fg;
                            dz[[r, k]] = d_i * ig * (one - ig);
                            dz[[r, u + k]] = d_f * fg * (one - fg);
                            dz[[r, 2 * u + k]] = d_g * (one - gg * gg);
                            dz[[r, 3 * u + k]] = d_o * og * (one - og);
                        }
                    }
                    if self.needs(*h) {
                        accumulate(&mut grads, *h, dz.dot(&self.value(*w)));
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads, *w, dz.t().dot(&self.value(*h)));
                    }
                    if self.needs(*c) {
                        accumulate(&mut grads, *c, dc_prev);
                    }
                    if self.needs(*pre) {
                        accumulate(&mut grads, *pre, dz);
                    }
                }
                Op::Mse { preds, targets } => {
                    let count: usize = preds.iter().map(|p| self.value(*p).len()).sum();
                    let scale = gy[[0, 0]] * T::from(2.0 / count as f64).unwrap_or_else(T::nan);
                    for (p, t) in preds.iter().zip(targets) {
                        let diff = (&self.value(*p) - &self.value(*t)).mapv(|d| d * scale);
                        if self.needs(*t) {
                            accumulate(&mut grads, *t, diff.mapv(|d| -d));
                        }
                        if self.needs(*p) {
                            accumulate(&mut grads, *p, diff);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, delta: Array2<T>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}
