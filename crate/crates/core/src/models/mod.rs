//! Sequence-to-sequence head-motion predictors: the position-only baseline,
//! TRACK with its two ablations, and the improved CVPR18 / MM18 variants.
//!
//! Every model runs an encoder over the `M` history positions, then decodes
//! `H` steps autoregressively. Each decoder step emits a displacement that is
//! added to the previous position; outputs are projected back onto the
//! sphere only at inference.

mod batch;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::error::{Error, Result};
use crate::nn::{
    read_checkpoint, write_checkpoint, Affine, CheckpointHeader, Graph, LossFn, LstmStack, LstmState, ParamId,
    ParamSet, Real, TrainConfig, Var,
};
use crate::saliency::Grid;
use crate::sphere::UnitVec3;

pub use batch::{BatchInputs, FrameBank};
pub use train::{train_model, training_windows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PosOnly,
    Track,
    Cvpr18i,
    Mm18i,
    TrackAblatSal,
    TrackAblatFuse,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::PosOnly,
        ModelKind::Track,
        ModelKind::Cvpr18i,
        ModelKind::Mm18i,
        ModelKind::TrackAblatSal,
        ModelKind::TrackAblatFuse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::PosOnly => "pos-only",
            ModelKind::Track => "track",
            ModelKind::Cvpr18i => "cvpr18i",
            ModelKind::Mm18i => "mm18i",
            ModelKind::TrackAblatSal => "track-ablat-sal",
            ModelKind::TrackAblatFuse => "track-ablat-fuse",
        }
    }

    pub fn uses_saliency(&self) -> bool {
        !matches!(self, ModelKind::PosOnly)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// Which TRACK component an ablation replaces with two dense layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    AblatSal,
    AblatFuse,
}

/// The TRACK variant with `ablation` applied.
pub fn ablate(ablation: Ablation) -> ModelKind {
    match ablation {
        Ablation::AblatSal => ModelKind::TrackAblatSal,
        Ablation::AblatFuse => ModelKind::TrackAblatFuse,
    }
}

/// Saliency fed during the encoder phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSaliency {
    /// Frames `t − M + 1 ..= t`.
    #[default]
    Contemporaneous,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub units: usize,
    pub layers: usize,
    pub grid: Grid,
    pub history: usize,
    pub horizon: usize,
    #[serde(default)]
    pub encoder_saliency: EncoderSaliency,
}

impl ModelConfig {
    /// Units 64, grid 64×64, `M = 5`, `H = 25`.
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            kind,
            units: 64,
            layers: 2,
            grid: Grid::new(64, 64),
            history: 5,
            horizon: 25,
            encoder_saliency: EncoderSaliency::Contemporaneous,
        }
    }

    /// Units 256, grid 256×256.
    pub fn paper(kind: ModelKind) -> Self {
        Self {
            units: 256,
            grid: Grid::new(256, 256),
            ..Self::desk(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.layers == 0 || self.history == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument("units, layers, history and horizon must be >= 1".into()));
        }
        if self.kind.uses_saliency() && self.grid.cells() == 0 {
            return Err(Error::InvalidArgument("saliency grid must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Content {
    Rnn(LstmStack),
    Dense(Affine, Affine),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Fusion {
    Rnn(LstmStack),
    Dense(Affine, Affine),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Arch {
    PosOnly {
        rnn: LstmStack,
        head: Affine,
        out: Affine,
    },
    Track {
        inertia: LstmStack,
        content: Content,
        fusion: Fusion,
        head: Affine,
        out: Affine,
    },
    Cvpr18i {
        rnn: LstmStack,
        fuse: Affine,
        head: Affine,
        out: Affine,
    },
    Mm18i {
        rnn: LstmStack,
        out: Affine,
    },
}

impl Arch {
    fn build(cfg: &ModelConfig, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> Result<Arch> {
        let (u, l, hw) = (cfg.units, cfg.layers, cfg.grid.cells());
        let out = |params: &mut ParamSet<f32>| Affine::zeroed(params, "out", &[u], 3);
        Ok(match cfg.kind {
            ModelKind::PosOnly => Arch::PosOnly {
                rnn: LstmStack::new(params, rng, "pos", &[3], u, l)?,
                head: Affine::new(params, rng, "head", &[u], u),
                out: out(params),
            },
            ModelKind::Track | ModelKind::TrackAblatSal | ModelKind::TrackAblatFuse => {
                let inertia = LstmStack::new(params, rng, "inertia", &[3], u, l)?;
                let content = if cfg.kind == ModelKind::TrackAblatSal {
                    Content::Dense(
                        Affine::new(params, rng, "content.d0", &[hw], u),
                        Affine::new(params, rng, "content.d1", &[u], u),
                    )
                } else {
                    Content::Rnn(LstmStack::new(params, rng, "content", &[hw], u, l)?)
                };
                let fusion = if cfg.kind == ModelKind::TrackAblatFuse {
                    Fusion::Dense(
                        Affine::new(params, rng, "fusion.d0", &[u, u], u),
                        Affine::new(params, rng, "fusion.d1", &[u], u),
                    )
                } else {
                    Fusion::Rnn(LstmStack::new(params, rng, "fusion", &[u, u], u, l)?)
                };
                Arch::Track {
                    inertia,
                    content,
                    fusion,
                    head: Affine::new(params, rng, "head", &[u], u),
                    out: out(params),
                }
            }
            ModelKind::Cvpr18i => Arch::Cvpr18i {
                rnn: LstmStack::new(params, rng, "pos", &[3], u, l)?,
                fuse: Affine::new(params, rng, "fuse", &[u, hw], u),
                head: Affine::new(params, rng, "head", &[u], u),
                out: out(params),
            },
            ModelKind::Mm18i => Arch::Mm18i {
                rnn: LstmStack::new(params, rng, "mm", &[hw, 3], u, l)?,
                out: out(params),
            },
        })
    }

    fn out(&self) -> &Affine {
        match self {
            Arch::PosOnly { out, .. } | Arch::Track { out, .. } | Arch::Cvpr18i { out, .. } | Arch::Mm18i { out, .. } => out,
        }
    }
}

/// Recurrent state between steps, one slot per stateful branch.
struct StepState {
    a: LstmState,
    b: Option<LstmState>,
    c: Option<LstmState>,
}

/// Per-batch cached saliency projections.
struct Projected {
    rows: Option<Var>,
}

impl Arch {
    fn init_state<T: Real>(&self, g: &mut Graph<'_, T>, batch: usize) -> StepState {
        match self {
            Arch::PosOnly { rnn, .. } | Arch::Cvpr18i { rnn, .. } | Arch::Mm18i { rnn, .. } => StepState {
                a: rnn.zero_state(g, batch),
                b: None,
                c: None,
            },
            Arch::Track {
                inertia,
                content,
                fusion,
                ..
            } => StepState {
                a: inertia.zero_state(g, batch),
                b: match content {
                    Content::Rnn(s) => Some(s.zero_state(g, batch)),
                    Content::Dense(..) => None,
                },
                c: match fusion {
                    Fusion::Rnn(s) => Some(s.zero_state(g, batch)),
                    Fusion::Dense(..) => None,
                },
            },
        }
    }

    /// Projects every unique frame once through the first saliency kernel,
    /// bias included.
    fn project_frames<T: Real>(&self, g: &mut Graph<'_, T>, frames: Option<&Array2<T>>) -> Result<Projected> {
        let Some(frames) = frames else {
            return Ok(Projected { rows: None });
        };
        let x = g.input(frames.clone());
        let rows = match self {
            Arch::PosOnly { .. } => return Ok(Projected { rows: None }),
            Arch::Track { content, .. } => match content {
                Content::Rnn(s) => s.layers[0].project(g, 0, x, true)?,
                Content::Dense(d0, _) => d0.project(g, 0, x, true)?,
            },
            Arch::Cvpr18i { fuse, .. } => fuse.project(g, 1, x, true)?,
            Arch::Mm18i { rnn, .. } => rnn.layers[0].project(g, 0, x, true)?,
        };
        Ok(Projected { rows: Some(rows) })
    }

    /// One step on position `pos` and frame rows `rows`. Returns the
    /// displacement when `emit` is set.
    fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        state: StepState,
        pos: Var,
        projected: &Projected,
        rows: Option<&[usize]>,
        emit: bool,
    ) -> Result<(StepState, Option<Var>)> {
        let sal = |g: &mut Graph<'_, T>| -> Result<Var> {
            let p = projected.rows.ok_or_else(|| Error::MissingSaliency("batch".into()))?;
            let r = rows.ok_or_else(|| Error::MissingSaliency("batch".into()))?;
            g.gather_rows(p, r)
        };
        match self {
            Arch::PosOnly { rnn, head, out } => {
                let (a, h) = rnn.step(g, &[(0, pos)], &[], &state.a)?;
                let delta = if emit {
                    let x = head.forward(g, &[h])?;
                    Some(out.forward(g, &[x])?)
                } else {
                    None
                };
                Ok((StepState { a, ..state }, delta))
            }
            Arch::Track {
                inertia,
                content,
                fusion,
                head,
                out,
            } => {
                let (a, hi) = inertia.step(g, &[(0, pos)], &[], &state.a)?;
                let s = sal(g)?;
                let (b, hc) = match content {
                    Content::Rnn(stack) => {
                        let (b, hc) = stack.step(g, &[], &[s], state.b.as_ref().expect("content state"))?;
                        (Some(b), hc)
                    }
                    Content::Dense(_, d1) => (None, d1.forward(g, &[s])?),
                };
                let (c, hf) = match fusion {
                    Fusion::Rnn(stack) => {
                        let (c, hf) = stack.step(g, &[(0, hc), (1, hi)], &[], state.c.as_ref().expect("fusion state"))?;
                        (Some(c), Some(hf))
                    }
                    Fusion::Dense(d0, d1) if emit => {
                        let x = d0.forward(g, &[hc, hi])?;
                        (None, Some(d1.forward(g, &[x])?))
                    }
                    Fusion::Dense(..) => (None, None),
                };
                let delta = match (emit, hf) {
                    (true, Some(hf)) => {
                        let x = head.forward(g, &[hf])?;
                        Some(out.forward(g, &[x])?)
                    }
                    _ => None,
                };
                Ok((StepState { a, b, c }, delta))
            }
            Arch::Cvpr18i { rnn, fuse, head, out } => {
                let (a, h) = rnn.step(g, &[(0, pos)], &[], &state.a)?;
                let delta = if emit {
                    let s = sal(g)?;
                    let x = fuse.combine(g, &[(0, h)], &[s])?;
                    let x = head.forward(g, &[x])?;
                    Some(out.forward(g, &[x])?)
                } else {
                    None
                };
                Ok((StepState { a, ..state }, delta))
            }
            Arch::Mm18i { rnn, out } => {
                let s = sal(g)?;
                let (a, h) = rnn.step(g, &[(1, pos)], &[s], &state.a)?;
                let delta = if emit { Some(out.forward(g, &[h])?) } else { None };
                Ok((StepState { a, ..state }, delta))
            }
        }
    }
}

/// Decoder feedback policy.
enum Feedback<'a> {
    /// Previous prediction stays on the tape; `truth[k]` replaces it when
    /// `use_truth[k]` is set.
    Train { use_truth: &'a [bool] },
    /// f64 accumulation off the tape.
    Infer,
}

/// A model architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel {
    pub config: ModelConfig,
    arch: Arch,
    params: ParamSet<f32>,
    trained: bool,
    pub train_config: Option<TrainConfig>,
    pub dataset_fingerprint: Option<String>,
    pub loss_history: Vec<f64>,
}

impl SeqModel {
    /// Fresh model: Glorot kernels, zero biases with forget bias 1, and an
    /// all-zero output layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Arch::build(&config, &mut params, &mut rng)?;
        Ok(Self {
            config,
            arch,
            params,
            trained: false,
            train_config: None,
            dataset_fingerprint: None,
            loss_history: Vec::new(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Kernel and bias of the final displacement layer.
    pub fn output_layer(&self) -> Vec<ParamId> {
        self.arch.out().param_ids()
    }

    pub fn zero_output_layer(&mut self) {
        for id in self.output_layer() {
            self.params.zero(id);
        }
    }

    /// Kernels that read the flattened saliency map directly.
    pub fn saliency_input_kernels(&self) -> Vec<ParamId> {
        match &self.arch {
            Arch::PosOnly { .. } => Vec::new(),
            Arch::Track { content, .. } => match content {
                Content::Rnn(s) => vec![s.layers[0].input_kernels[0]],
                Content::Dense(d0, _) => vec![d0.weights[0]],
            },
            Arch::Cvpr18i { fuse, .. } => vec![fuse.weights[1]],
            Arch::Mm18i { rnn, .. } => vec![rnn.layers[0].input_kernels[0]],
        }
    }

    /// Input and recurrent kernels of TRACK's inertia branch.
    pub fn inertia_kernels(&self) -> Vec<ParamId> {
        match &self.arch {
            Arch::Track { inertia, .. } => inertia
                .layers
                .iter()
                .flat_map(|l| l.input_kernels.iter().copied().chain([l.recurrent_kernel]))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Graph for a batch. Returns the predicted position nodes per decoder
    /// step and, under inference feedback, the f64 positions accumulated from
    /// `inputs.anchor`.
    fn unroll<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        inputs: &BatchInputs<T>,
        feedback: Feedback<'_>,
    ) -> Result<(Vec<Var>, Vec<Vec<[f64; 3]>>)> {
        let (m, h) = (self.config.history, self.config.horizon);
        let projected = self.arch.project_frames(g, inputs.frames.as_ref())?;
        let rows = |k: usize| (!inputs.frame_rows.is_empty()).then(|| inputs.frame_rows[k].as_slice());
        let mut state = self.arch.init_state(g, inputs.batch);
        for j in 0..m {
            let pos = g.input(inputs.history[j].clone());
            state = self.arch.step(g, state, pos, &projected, rows(j), false)?.0;
        }
        let mut prev = g.input(inputs.history[m - 1].clone());
        let mut acc = inputs.anchor.clone();
        let mut accumulated = Vec::new();
        let mut outputs = Vec::with_capacity(h);
        for k in 0..h {
            let (next, delta) = self.arch.step(g, state, prev, &projected, rows(m + k), true)?;
            state = next;
            let delta = delta.expect("decoder emits");
            match &feedback {
                Feedback::Train { use_truth } => {
                    let p = g.add(prev, delta)?;
                    outputs.push(p);
                    prev = if use_truth.get(k).copied().unwrap_or(false) {
                        g.input(inputs.targets[k].clone())
                    } else {
                        p
                    };
                }
                Feedback::Infer => {
                    let d = g.value(delta);
                    let mut arr = Array2::<T>::zeros((inputs.batch, 3));
                    for (r, a) in acc.iter_mut().enumerate() {
                        for c in 0..3 {
                            a[c] += d[[r, c]].to_f64().unwrap_or(f64::NAN);
                            arr[[r, c]] = T::of(a[c]);
                        }
                    }
                    accumulated.push(acc.clone());
                    prev = g.input(arr);
                    outputs.push(prev);
                }
            }
        }
        Ok((outputs, accumulated))
    }

    fn loss_graph<T: Real>(&self, g: &mut Graph<'_, T>, inputs: &BatchInputs<T>, use_truth: &[bool]) -> Result<Var> {
        let (preds, _) = self.unroll(g, inputs, Feedback::Train { use_truth })?;
        let targets: Vec<_> = inputs.targets.iter().map(|t| g.input(t.clone())).collect();
        g.mse(&preds, &targets)
    }

    /// Predicts `H` unit positions per window, accumulating displacements in
    /// f64 from each window's last history position. Requires training.
    pub fn predict(&self, windows: &[Window<'_>], bank: Option<&FrameBank>) -> Result<Vec<Vec<UnitVec3>>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        self.infer(windows, bank)
    }

    /// As [`SeqModel::predict`] but regardless of training state.
    pub fn infer(&self, windows: &[Window<'_>], bank: Option<&FrameBank>) -> Result<Vec<Vec<UnitVec3>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let inputs = BatchInputs::<f32>::build(windows, bank, &self.config, false)?;
        let mut g = Graph::new(&self.params);
        let (_, steps) = self.unroll(&mut g, &inputs, Feedback::Infer)?;
        let mut out: Vec<Vec<UnitVec3>> = windows.iter().map(|_| Vec::with_capacity(steps.len())).collect();
        for step in steps {
            for (r, a) in step.into_iter().enumerate() {
                out[r].push(UnitVec3::normalize_or(a, windows[r].last_position()));
            }
        }
        Ok(out)
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CheckpointHeader {
            kind: self.config.kind.to_string(),
            model: serde_json::to_value(&self.config)?,
            train: self.train_config.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            loss_history: self.loss_history.clone(),
            tensors: Vec::new(),
        };
        write_checkpoint(path, &header, &self.params)
    }

    /// Loads a checkpoint, rejecting any tensor whose name or shape differs
    /// from the architecture its header describes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, params) = read_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(header.model)?;
        if config.kind.as_str() != header.kind {
            return Err(Error::Format(format!("header kind `{}` disagrees with model config", header.kind)));
        }
        let mut model = SeqModel::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            let (want, have) = (model.params.get(id), params.get(id));
            if model.params.name(id) != params.name(id) || want.dim() != have.dim() {
                return Err(Error::Shape(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    params.name(id),
                    have.dim(),
                    model.params.name(id),
                    want.dim()
                )));
            }
        }
        params.check_finite()?;
        model.params = params;
        model.trained = true;
        model.train_config = header.train;
        model.dataset_fingerprint = header.dataset_fingerprint;
        model.loss_history = header.loss_history;
        Ok(model)
    }
}

/// Training loss of a model on fixed windows, for gradient checking.
pub struct ModelLoss<'m> {
    model: &'m SeqModel,
    inputs: BatchInputs<f64>,
}

impl<'m> ModelLoss<'m> {
    pub fn new(model: &'m SeqModel, windows: &[Window<'_>], bank: Option<&FrameBank>) -> Result<Self> {
        let inputs = BatchInputs::<f64>::build(windows, bank, &model.config, true)?;
        Ok(Self { model, inputs })
    }
}

impl LossFn for ModelLoss<'_> {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let inputs = self.inputs.cast::<T>();
        self.model.loss_graph(g, &inputs, &[])
    }
}

#[cfg(test)]
mod tests;
