use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchInputs, FrameBank, ModelConfig, SeqModel};
use crate::dataset::{windows, Dataset, Subset, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, TrainConfig};

/// Windows of `subset` shaped for `cfg`, keeping every `stride`-th window of
/// each trace.
pub fn training_windows<'a>(
    dataset: &'a Dataset,
    cfg: &ModelConfig,
    t_start: f64,
    stride: usize,
    subset: Option<Subset>,
) -> Vec<Window<'a>> {
    let spec = WindowSpec {
        history: cfg.history,
        horizon: cfg.horizon,
        t_start,
        dt: dataset.dt(),
    };
    let first = spec.first_index();
    windows(dataset, spec, subset)
        .filter(|w| (w.t_index - first) % stride.max(1) == 0)
        .collect()
}

/// Minimizes the 3D mean squared error of the decoded positions over the
/// train split. Batches draw from a shuffled list of `(video, t)` groups so
/// that windows sharing saliency frames are projected once.
pub fn train_model(mut model: SeqModel, dataset: &Dataset, bank: Option<&FrameBank>, cfg: &TrainConfig) -> Result<SeqModel> {
    cfg.validate()?;
    if dataset.videos_in(Subset::Train).next().is_none() {
        return Err(Error::InvalidArgument("dataset has no train split".into()));
    }
    let train = training_windows(dataset, &model.config, cfg.t_start, cfg.window_stride, Some(Subset::Train));
    if train.is_empty() {
        return Err(Error::Empty("no training windows".into()));
    }
    let mut groups: BTreeMap<(&str, usize), Vec<Window<'_>>> = BTreeMap::new();
    for w in train {
        groups.entry((w.video_id, w.t_index)).or_default().push(w);
    }
    let mut groups: Vec<Vec<Window<'_>>> = groups.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model.params, cfg.adam);
    let horizon = model.config.horizon;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        groups.shuffle(&mut rng);
        let order: Vec<Window<'_>> = groups.iter().flatten().copied().collect();
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut inputs = BatchInputs::<f32>::build(chunk, bank, &model.config, true)?;
            if cfg.longitude_augmentation {
                let grid = model.config.grid;
                inputs.rotate_longitude(grid, rng.random_range(0..grid.width.max(1)));
            }
            let use_truth: Vec<bool> = (0..horizon)
                .map(|_| cfg.scheduled_sampling > 0.0 && rng.random::<f64>() < cfg.scheduled_sampling)
                .collect();
            let mut grads = {
                let mut g = Graph::new(&model.params);
                let loss = model.loss_graph(&mut g, &inputs, &use_truth)?;
                let value = g.scalar(loss) as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                total += value;
                g.backward(loss)?
            };
            if let Some(max) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            adam.update(&mut model.params, &grads, cfg.learning_rate)?;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("{} epoch {}/{}: loss {:.6e}", model.config.kind, epoch + 1, cfg.epochs, mean);
        history.push(mean);
    }
    model.loss_history = history;
    model.train_config = Some(cfg.clone());
    model.dataset_fingerprint = Some(dataset.fingerprint());
    model.trained = true;
    Ok(model)
}
