use super::*;
use crate::dataset::{split_train_test, synth_generate, SynthConfig, SynthKind, SynthOutput};
use crate::nn::gradient_check;
use crate::saliency::{gt_saliency_sequence, SaliencyMap, SaliencySequence};

fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        units: 4,
        layers: 2,
        grid: Grid::new(4, 4),
        history: 2,
        horizon: 3,
        encoder_saliency: EncoderSaliency::Contemporaneous,
    }
}

fn tiny_data() -> (SynthOutput, FrameBank) {
    let cfg = SynthConfig {
        grid: Some(Grid::new(4, 4)),
        ..SynthConfig::new(SynthKind::StaticFocus, 2, 3, 4.0, 1)
    };
    let mut out = synth_generate(&cfg).unwrap();
    out.dataset = split_train_test(&out.dataset, &["static_focus_001"]).unwrap();
    let bank = FrameBank::new(&out.saliency).unwrap();
    (out, bank)
}

fn some_windows<'a>(out: &'a SynthOutput, cfg: &ModelConfig, n: usize) -> Vec<Window<'a>> {
    training_windows(&out.dataset, cfg, 0.0, 1, None).into_iter().take(n).collect()
}

fn randomize(model: &mut SeqModel, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in model.params_mut().values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-0.2..0.2));
    }
}

#[test]
fn zeroed_output_reproduces_static_for_every_kind() {
    let (out, bank) = tiny_data();
    for kind in ModelKind::ALL {
        let cfg = tiny_config(kind);
        let mut model = SeqModel::new(cfg.clone(), 5).unwrap();
        randomize(&mut model, 6);
        model.zero_output_layer();
        let ws = some_windows(&out, &cfg, 7);
        let pred = model.infer(&ws, Some(&bank)).unwrap();
        for (w, p) in ws.iter().zip(&pred) {
            let last = w.last_position();
            let expect = UnitVec3::normalize_or(last.to_array(), last);
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|q| *q == expect), "{kind}");
        }
    }
}

#[test]
fn gradients_of_every_kind_match_finite_differences() {
    let (out, bank) = tiny_data();
    for kind in ModelKind::ALL {
        let cfg = tiny_config(kind);
        let mut model = SeqModel::new(cfg.clone(), 2).unwrap();
        randomize(&mut model, 3);
        let ws = some_windows(&out, &cfg, 2);
        let loss = ModelLoss::new(&model, &ws, Some(&bank)).unwrap();
        let params = model.params().cast::<f64>();
        let r = gradient_check::<f64>(&params, &loss, 1e-5, 1e-6).unwrap();
        assert!(r.max_relative_error < 1e-5, "{kind}: {r:?}");
    }
}

fn perturbed_bank(out: &SynthOutput, from_frame: usize, video: &str) -> FrameBank {
    let seqs: Vec<SaliencySequence> = out
        .saliency
        .iter()
        .map(|s| {
            if s.video_id != video {
                return s.clone();
            }
            let maps = s
                .maps()
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    if k < from_frame {
                        m.clone()
                    } else {
                        let vals = m.values().iter().enumerate().map(|(i, v)| v * 0.5 + (i % 3) as f32).collect();
                        SaliencyMap::new(m.grid(), vals).unwrap()
                    }
                })
                .collect();
            SaliencySequence::new(s.video_id.clone(), s.dt, maps).unwrap()
        })
        .collect();
    FrameBank::new(&seqs).unwrap()
}

#[test]
fn decoder_is_causal_in_saliency() {
    let (out, bank) = tiny_data();
    let cfg = tiny_config(ModelKind::Track);
    let mut model = SeqModel::new(cfg.clone(), 9).unwrap();
    randomize(&mut model, 10);
    let w = some_windows(&out, &cfg, 1);
    let base = model.infer(&w, Some(&bank)).unwrap();
    for k in 1..=cfg.horizon {
        let bumped = perturbed_bank(&out, w[0].t_index + k + 1, w[0].video_id);
        let p = model.infer(&w, Some(&bumped)).unwrap();
        assert_eq!(&p[0][..k], &base[0][..k]);
    }
    let all = perturbed_bank(&out, w[0].t_index + 1, w[0].video_id);
    assert_ne!(model.infer(&w, Some(&all)).unwrap(), base);
}

#[test]
fn dead_content_branch_ignores_saliency() {
    let (out, bank) = tiny_data();
    for kind in [ModelKind::Track, ModelKind::TrackAblatSal, ModelKind::Cvpr18i, ModelKind::Mm18i] {
        let cfg = tiny_config(kind);
        let mut model = SeqModel::new(cfg.clone(), 4).unwrap();
        randomize(&mut model, 5);
        for id in model.saliency_input_kernels() {
            model.params_mut().zero(id);
        }
        let w = some_windows(&out, &cfg, 3);
        let other = perturbed_bank(&out, 0, w[0].video_id);
        assert_eq!(model.infer(&w, Some(&bank)).unwrap(), model.infer(&w, Some(&other)).unwrap(), "{kind}");
    }
}

#[test]
fn dead_inertia_branch_keeps_only_residual_position() {
    let (out, bank) = tiny_data();
    let cfg = tiny_config(ModelKind::Track);
    let mut model = SeqModel::new(cfg.clone(), 4).unwrap();
    randomize(&mut model, 5);
    for id in model.inertia_kernels() {
        model.params_mut().zero(id);
    }
    let w = some_windows(&out, &cfg, 2);
    // Shifting the history while keeping the last position fixed leaves
    // every displacement unchanged.
    let traces = out.dataset.traces();
    let t = traces.iter().find(|t| t.video_id() == w[0].video_id && t.user_id() == w[0].user_id).unwrap();
    let mut hist = t.samples()[w[0].t_index + 1 - cfg.history..=w[0].t_index].to_vec();
    hist[0] = UnitVec3::Z;
    let w2 = Window { history: &hist, ..w[0] };
    let a = model.infer(&w[..1], Some(&bank)).unwrap();
    let b = model.infer(&[w2], Some(&bank)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablations_are_smaller_and_share_interface() {
    let count = |k| SeqModel::new(tiny_config(k), 0).unwrap().parameter_count();
    assert!(count(ModelKind::TrackAblatSal) < count(ModelKind::Track));
    assert!(count(ModelKind::TrackAblatFuse) < count(ModelKind::Track));
    let (u, hw) = (4usize, 16usize);
    let lstm = |i: usize| 4 * u * (i + u + 1);
    let dense = |i: usize, o: usize| o * (i + 1);
    let head = dense(u, u) + dense(u, 3);
    let track = lstm(3) + lstm(u) + lstm(hw) + lstm(u) + lstm(2 * u) + lstm(u) + head;
    assert_eq!(count(ModelKind::Track), track);
    let ablat_sal = track - lstm(hw) - lstm(u) + dense(hw, u) + dense(u, u);
    assert_eq!(count(ModelKind::TrackAblatSal), ablat_sal);
    assert_eq!(ablate(Ablation::AblatFuse), ModelKind::TrackAblatFuse);
}

#[test]
fn training_records_history_and_checkpoint_round_trips() {
    let (out, bank) = tiny_data();
    let cfg = tiny_config(ModelKind::Track);
    let model = SeqModel::new(cfg.clone(), 1).unwrap();
    let w = some_windows(&out, &cfg, 1);
    assert!(matches!(model.predict(&w, Some(&bank)), Err(Error::Untrained)));
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        t_start: 0.0,
        window_stride: 3,
        ..TrainConfig::desk()
    };
    let trained = train_model(model, &out.dataset, Some(&bank), &tc).unwrap();
    assert_eq!(trained.loss_history.len(), 2);
    assert!(trained.predict(&w, Some(&bank)).is_ok());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("track.hmbk");
    trained.save(&path).unwrap();
    let loaded = SeqModel::load(&path).unwrap();
    assert_eq!(loaded.params(), trained.params());
    assert_eq!(loaded.predict(&w, Some(&bank)).unwrap(), trained.predict(&w, Some(&bank)).unwrap());

    // Same seed, same data: bit-identical parameters.
    let again = train_model(SeqModel::new(cfg.clone(), 1).unwrap(), &out.dataset, Some(&bank), &tc).unwrap();
    assert_eq!(again.params(), trained.params());

    // Ground-truth maps instead of content maps change the result.
    let gt: Vec<_> = out
        .dataset
        .video_ids()
        .map(|v| gt_saliency_sequence(&out.dataset, v, Grid::new(4, 4), 0.1).unwrap())
        .collect();
    let gt_bank = FrameBank::new(&gt).unwrap();
    let other = train_model(SeqModel::new(cfg.clone(), 1).unwrap(), &out.dataset, Some(&gt_bank), &tc).unwrap();
    assert_ne!(other.params(), trained.params());

    let mut small = tiny_config(ModelKind::Track);
    small.units = 3;
    let mut header_swap = SeqModel::new(small, 0).unwrap();
    header_swap.mark_trained();
    let p2 = dir.path().join("bad.hmbk");
    // Tamper with the recorded config so tensor shapes disagree.
    let mut cfg_lie = header_swap.config.clone();
    cfg_lie.units = 4;
    let header = CheckpointHeader {
        kind: "track".into(),
        model: serde_json::to_value(&cfg_lie).unwrap(),
        train: None,
        dataset_fingerprint: None,
        loss_history: vec![],
        tensors: vec![],
    };
    write_checkpoint(&p2, &header, header_swap.params()).unwrap();
    assert!(matches!(SeqModel::load(&p2), Err(Error::Shape(_))));
}

#[test]
fn missing_saliency_is_an_error() {
    let (out, _) = tiny_data();
    let cfg = tiny_config(ModelKind::Track);
    let model = SeqModel::new(cfg.clone(), 1).unwrap();
    let w = some_windows(&out, &cfg, 1);
    assert!(matches!(model.infer(&w, None), Err(Error::MissingSaliency(_))));
    let wrong = FrameBank::new(&[SaliencySequence::new(
        "static_focus_000",
        0.2,
        vec![SaliencyMap::zeros(Grid::new(2, 2))],
    )
    .unwrap()])
    .unwrap();
    assert!(matches!(model.infer(&w, Some(&wrong)), Err(Error::Shape(_))));
    let pos = SeqModel::new(tiny_config(ModelKind::PosOnly), 1).unwrap();
    assert!(pos.infer(&w, None).is_ok());
}

#[test]
fn longitude_rotation_moves_positions_and_frames_together() {
    let g = Grid::new(4, 8);
    let cfg = SynthConfig {
        grid: Some(g),
        ..SynthConfig::new(SynthKind::StaticFocus, 1, 2, 4.0, 3)
    };
    let out = synth_generate(&cfg).unwrap();
    let bank = FrameBank::new(&out.saliency).unwrap();
    let mcfg = ModelConfig { grid: g, ..tiny_config(ModelKind::Track) };
    let w = some_windows(&out, &mcfg, 6);
    let base = BatchInputs::<f64>::build(&w, Some(&bank), &mcfg, true).unwrap();
    let mut full = base.clone();
    full.rotate_longitude(g, g.width);
    assert_eq!(full.history, base.history);
    for k in 1..g.width {
        let mut r = base.clone();
        r.rotate_longitude(g, k);
        for (a, b) in r.anchor.iter().zip(&base.anchor) {
            let (ra, ca) = g.cell_of(&UnitVec3::normalize_or(*a, UnitVec3::Z));
            let (rb, cb) = g.cell_of(&UnitVec3::normalize_or(*b, UnitVec3::Z));
            assert_eq!((ra, ca), (rb, (cb + k) % g.width));
            assert!((a[2] - b[2]).abs() < 1e-12);
        }
        let (fr, fb) = (r.frames.as_ref().unwrap(), base.frames.as_ref().unwrap());
        for row in 0..g.height {
            for col in 0..g.width {
                let moved = row * g.width + (col + k) % g.width;
                assert_eq!(fr.column(moved), fb.column(row * g.width + col));
            }
        }
    }
}
