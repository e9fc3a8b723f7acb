//! Normalized saliency frames and rectangular batches of windows.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::{EncoderSaliency, ModelConfig};
use crate::dataset::Window;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::saliency::{Grid, SaliencySequence};

/// Flattened saliency frames per video, each map standardized to zero mean
/// and unit variance (constant maps become all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBank {
    grid: Grid,
    frames: BTreeMap<String, Array2<f32>>,
}

impl FrameBank {
    pub fn new(sequences: &[SaliencySequence]) -> Result<Self> {
        let grid = sequences
            .iter()
            .find_map(|s| s.grid())
            .ok_or_else(|| Error::Empty("no saliency frames".into()))?;
        let mut frames = BTreeMap::new();
        for seq in sequences {
            if seq.grid().is_some_and(|g| g != grid) {
                return Err(Error::Shape(format!(
                    "saliency for `{}` is {:?}, expected {:?}",
                    seq.video_id,
                    seq.grid(),
                    grid
                )));
            }
            let mut m = Array2::<f32>::zeros((seq.len(), grid.cells()));
            for (k, map) in seq.maps().iter().enumerate() {
                let v = map.values();
                let n = v.len() as f64;
                let mean = v.iter().map(|x| *x as f64).sum::<f64>() / n;
                let var = v.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                if std > 1e-12 {
                    for (dst, x) in m.row_mut(k).iter_mut().zip(v) {
                        *dst = ((*x as f64 - mean) / std) as f32;
                    }
                }
            }
            frames.insert(seq.video_id.clone(), m);
        }
        Ok(Self { grid, frames })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn frames(&self, video_id: &str) -> Option<&Array2<f32>> {
        self.frames.get(video_id)
    }

    pub fn videos(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }
}

/// Network inputs for a batch of windows.
#[derive(Clone, Debug)]
pub struct BatchInputs<T> {
    /// `M` matrices `[B, 3]`.
    pub history: Vec<Array2<T>>,
    /// `H` matrices `[B, 3]`; empty at inference.
    pub targets: Vec<Array2<T>>,
    /// Last history position of each window, full precision.
    pub anchor: Vec<[f64; 3]>,
    /// Unique frames `[n, H·W]` plus one trailing all-zero row.
    pub frames: Option<Array2<T>>,
    /// Per step (`M` encoder steps then `H` decoder steps), a row of
    /// `frames` for each window.
    pub frame_rows: Vec<Vec<usize>>,
    pub batch: usize,
}

impl<T: Real> BatchInputs<T> {
    pub fn build(windows: &[Window<'_>], bank: Option<&FrameBank>, cfg: &ModelConfig, with_targets: bool) -> Result<Self> {
        let (m, h) = (cfg.history, cfg.horizon);
        if windows.is_empty() {
            return Err(Error::Empty("batch without windows".into()));
        }
        for w in windows {
            if w.history.len() != m || (with_targets && w.future.len() != h) {
                return Err(Error::Shape(format!(
                    "window has {}+{} steps, model expects {m}+{h}",
                    w.history.len(),
                    w.future.len()
                )));
            }
        }
        let b = windows.len();
        let to_matrix = |pick: &dyn Fn(&Window<'_>) -> [f64; 3]| {
            let mut a = Array2::<T>::zeros((b, 3));
            for (r, w) in windows.iter().enumerate() {
                let v = pick(w);
                for k in 0..3 {
                    a[[r, k]] = T::of(v[k]);
                }
            }
            a
        };
        let history = (0..m).map(|j| to_matrix(&|w| w.history[j].to_array())).collect();
        let targets = if with_targets {
            (0..h).map(|k| to_matrix(&|w| w.future[k].to_array())).collect()
        } else {
            Vec::new()
        };
        let anchor = windows.iter().map(|w| w.last_position().to_array()).collect();
        if !cfg.kind.uses_saliency() {
            return Ok(Self {
                history,
                targets,
                anchor,
                frames: None,
                frame_rows: Vec::new(),
                batch: b,
            });
        }
        let bank = bank.ok_or_else(|| Error::MissingSaliency(windows[0].video_id.to_string()))?;
        if bank.grid() != cfg.grid {
            return Err(Error::Shape(format!("saliency grid {:?}, model grid {:?}", bank.grid(), cfg.grid)));
        }
        let mut unique: BTreeMap<(&str, usize), usize> = BTreeMap::new();
        let mut sources: Vec<(&Array2<f32>, usize)> = Vec::new();
        let mut rows = vec![Vec::with_capacity(b); m + h];
        let zero_marker = usize::MAX;
        for w in windows {
            let frames = bank
                .frames(w.video_id)
                .ok_or_else(|| Error::MissingSaliency(w.video_id.to_string()))?;
            let need = w.t_index + h + 1;
            if frames.nrows() < need {
                return Err(Error::SaliencyTooShort {
                    video: w.video_id.to_string(),
                    have: frames.nrows(),
                    need,
                });
            }
            for (step, row) in rows.iter_mut().enumerate() {
                let frame = if step < m {
                    match cfg.encoder_saliency {
                        EncoderSaliency::Contemporaneous => w.t_index + 1 + step - m,
                        EncoderSaliency::Zeros => {
                            row.push(zero_marker);
                            continue;
                        }
                    }
                } else {
                    w.t_index + 1 + step - m
                };
                let next = unique.len();
                let idx = *unique.entry((w.video_id, frame)).or_insert_with(|| {
                    sources.push((frames, frame));
                    next
                });
                row.push(idx);
            }
        }
        let zero_row = sources.len();
        let mut mat = Array2::<T>::zeros((zero_row + 1, cfg.grid.cells()));
        for (r, (frames, k)) in sources.iter().enumerate() {
            for (dst, src) in mat.row_mut(r).iter_mut().zip(frames.row(*k)) {
                *dst = T::of(*src as f64);
            }
        }
        for row in &mut rows {
            for idx in row.iter_mut() {
                if *idx == zero_marker {
                    *idx = zero_row;
                }
            }
        }
        Ok(Self {
            history,
            targets,
            anchor,
            frames: Some(mat),
            frame_rows: rows,
            batch: b,
        })
    }

    /// Rotates the whole batch about the polar axis by `cols` grid columns:
    /// positions turn by `cols · 2π / W` and every frame rolls east by
    /// `cols`, which is the same rotation on the grid.
    pub fn rotate_longitude(&mut self, grid: Grid, cols: usize) {
        let w = grid.width;
        let cols = cols % w.max(1);
        if cols == 0 {
            return;
        }
        let (s, c) = (std::f64::consts::TAU * cols as f64 / w as f64).sin_cos();
        let turn = |a: &mut Array2<T>| {
            for mut r in a.rows_mut() {
                let (x, y) = (r[0].to_f64().unwrap_or(0.0), r[1].to_f64().unwrap_or(0.0));
                r[0] = T::of(c * x - s * y);
                r[1] = T::of(s * x + c * y);
            }
        };
        self.history.iter_mut().chain(self.targets.iter_mut()).for_each(turn);
        for a in &mut self.anchor {
            let (x, y) = (a[0], a[1]);
            a[0] = c * x - s * y;
            a[1] = s * x + c * y;
        }
        if let Some(frames) = &mut self.frames {
            let cells = frames.as_slice_mut().expect("frames are contiguous");
            for lat in cells.chunks_exact_mut(w) {
                lat.rotate_right(cols);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> BatchInputs<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::of(x.to_f64().expect("finite input")));
        BatchInputs {
            history: self.history.iter().map(c).collect(),
            targets: self.targets.iter().map(c).collect(),
            anchor: self.anchor.clone(),
            frames: self.frames.as_ref().map(c),
            frame_rows: self.frame_rows.clone(),
            batch: self.batch,
        }
    }
}
