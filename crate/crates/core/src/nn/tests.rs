use super::*;
use approx::assert_abs_diff_eq;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

struct StackLoss {
    stack: LstmStack,
    inputs: Vec<Array2<f64>>,
    target: Array2<f64>,
}

impl LossFn for StackLoss {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let batch = self.target.nrows();
        let mut state = self.stack.zero_state(g, batch);
        let mut outs = Vec::new();
        for x in &self.inputs {
            let x = g.input(x.mapv(T::of));
            let (next, h) = self.stack.step(g, &[(0, x)], &[], &state)?;
            state = next;
            outs.push(h);
        }
        let t = g.input(self.target.mapv(T::of));
        let targets = vec![t; outs.len()];
        g.mse(&outs, &targets)
    }
}

fn stack_case(seed: u64) -> (ParamSet<f64>, StackLoss) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let stack = LstmStack::new(&mut params, &mut rng, "s", &[3], 4, 2).unwrap();
    // Randomize biases too so every gate sees a non-trivial operating point.
    for v in params.values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
    }
    let inputs = (0..3).map(|_| random_input(&mut rng, 2, 3)).collect();
    let target = random_input(&mut rng, 2, 4);
    (params, StackLoss { stack, inputs, target })
}

#[test]
fn lstm_stack_gradients_match_finite_differences() {
    for seed in [1, 2] {
        let (params, f) = stack_case(seed);
        let r64 = gradient_check::<f64>(&params, &f, 1e-5, 1e-6).unwrap();
        assert!(r64.max_relative_error < 1e-5, "{r64:?}");
        let r32 = gradient_check::<f32>(&params, &f, 1e-5, 1e-3).unwrap();
        assert!(r32.max_relative_error < 1e-3, "{r32:?}");
    }
}

struct DenseLoss {
    layers: Vec<Affine>,
    a: Array2<f64>,
    b: Array2<f64>,
    target: Array2<f64>,
}

impl LossFn for DenseLoss {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let a = g.input(self.a.mapv(T::of));
        let b = g.input(self.b.mapv(T::of));
        let h = self.layers[0].forward(g, &[a, b])?;
        let pre = self.layers[1].project(g, 0, h, true)?;
        let y = self.layers[1].combine(g, &[], &[pre])?;
        let both = g.concat_cols(&[y, h])?;
        let rows = g.gather_rows(both, &[1, 0, 1])?;
        let out = g.slice_cols(rows, 1, 4)?;
        let t = g.input(self.target.mapv(T::of));
        g.mse(&[out], &[t])
    }
}

#[test]
fn dense_and_plumbing_gradients_match_finite_differences() {
    for seed in [3, 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layers = vec![
            Affine::new(&mut params, &mut rng, "d0", &[2, 3], 4),
            Affine::new(&mut params, &mut rng, "d1", &[4], 3),
        ];
        for v in params.values_mut() {
            v.mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
        }
        let f = DenseLoss {
            layers,
            a: random_input(&mut rng, 2, 2),
            b: random_input(&mut rng, 2, 3),
            target: random_input(&mut rng, 3, 3),
        };
        let r64 = gradient_check::<f64>(&params, &f, 1e-5, 1e-6).unwrap();
        assert!(r64.max_relative_error < 1e-5, "{r64:?}");
        let r32 = gradient_check::<f32>(&params, &f, 1e-5, 1e-3).unwrap();
        assert!(r32.max_relative_error < 1e-3, "{r32:?}");
    }
}

#[test]
fn zero_lstm_outputs_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::<f64>::new();
    let stack = LstmStack::new(&mut params, &mut rng, "s", &[5], 3, 2).unwrap();
    for v in params.values_mut() {
        v.fill(0.0);
    }
    let state = vec![(Array2::zeros((2, 3)), Array2::zeros((2, 3))); 2];
    let input = random_input(&mut rng, 2, 5);
    let (next, out) = lstm_step(&stack, &params, &state, &input).unwrap();
    assert!(out.iter().all(|v| *v == 0.0));
    assert!(next.iter().all(|(h, c)| h.iter().chain(c.iter()).all(|v| *v == 0.0)));
    let again = lstm_step(&stack, &params, &state, &input).unwrap();
    assert_eq!(again.1, out);
    assert!(lstm_step(&stack, &params, &state, &random_input(&mut rng, 2, 4)).is_err());
}

#[test]
fn stack_equals_sequential_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ParamSet::<f64>::new();
    let stack = LstmStack::new(&mut params, &mut rng, "s", &[3], 4, 3).unwrap();
    let state: Vec<_> = (0..3)
        .map(|_| (random_input(&mut rng, 2, 4), random_input(&mut rng, 2, 4)))
        .collect();
    let x = random_input(&mut rng, 2, 3);
    let (full, top) = lstm_step(&stack, &params, &state, &x).unwrap();
    let mut input = x;
    for (k, layer) in stack.layers.iter().enumerate() {
        let single = LstmStack { layers: vec![layer.clone()] };
        let (s, out) = lstm_step(&single, &params, &state[k..k + 1], &input).unwrap();
        assert_eq!(s[0], full[k]);
        input = out;
    }
    assert_eq!(input, top);
}

#[test]
fn lstm_cell_matches_scalar_formula() {
    let mut params = ParamSet::<f64>::new();
    let layer = LstmLayer {
        input_kernels: vec![params.add("wx", array![[0.5], [-0.25], [1.0], [0.75]])],
        recurrent_kernel: params.add("wh", array![[0.1], [0.2], [-0.3], [0.4]]),
        bias: params.add("b", array![[0.0, 1.0, 0.0, 0.0]]),
        in_dims: vec![1],
        units: 1,
    };
    let stack = LstmStack { layers: vec![layer] };
    let (h0, c0, x) = (0.3, -0.2, 0.8);
    let (next, _) = lstm_step(&stack, &params, &[(array![[h0]], array![[c0]])], &array![[x]]).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(0.5 * x + 0.1 * h0);
    let f = sig(-0.25 * x + 0.2 * h0 + 1.0);
    let g = (1.0 * x - 0.3 * h0).tanh();
    let o = sig(0.75 * x + 0.4 * h0);
    let c = f * c0 + i * g;
    assert_abs_diff_eq!(next[0].1[[0, 0]], c, epsilon = 1e-15);
    assert_abs_diff_eq!(next[0].0[[0, 0]], o * c.tanh(), epsilon = 1e-15);
}

#[test]
fn forget_bias_initialized_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::<f32>::new();
    let layer = LstmLayer::new(&mut params, &mut rng, "l", &[3], 2);
    assert_eq!(params.get(layer.bias), &array![[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]]);
}

#[test]
fn mse_examples() {
    let t = [[0.1, 0.2, 0.3], [1.0, 0.0, 0.0]];
    assert_eq!(mse_xyz_loss(&t, &t).unwrap().0, 0.0);
    let d = 0.25;
    let p: Vec<_> = t.iter().map(|v| [v[0] + d, v[1], v[2]]).collect();
    assert_abs_diff_eq!(mse_xyz_loss(&p, &t).unwrap().0, d * d / 3.0, epsilon = 1e-15);
    assert!(mse_xyz_loss(&[], &[]).is_err());

    // Analytic gradient against central differences.
    let (_, grad) = mse_xyz_loss(&p, &t).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        for k in 0..3 {
            let mut up = p.clone();
            up[i][k] += h;
            let mut down = p.clone();
            down[i][k] -= h;
            let n = (mse_xyz_loss(&up, &t).unwrap().0 - mse_xyz_loss(&down, &t).unwrap().0) / (2.0 * h);
            let rel = (n - grad[i][k]).abs() / grad[i][k].abs().max(n.abs()).max(1e-9);
            assert!(rel < 1e-6 || (n - grad[i][k]).abs() < 1e-10);
        }
    }
}

#[test]
fn adam_zero_gradient_is_noop_and_sign_follows_gradient() {
    let mut params = ParamSet::<f64>::new();
    let id = params.add("w", array![[1.0, -2.0]]);
    let before = params.clone();
    let mut adam = Adam::new(&params, AdamConfig::default());
    let zero = Grads::zeros_like(&params);
    adam.update(&mut params, &zero, 0.1).unwrap();
    assert_eq!(params, before);
    let g = Grads {
        tensors: vec![array![[0.5, -0.5]]],
    };
    for _ in 0..20 {
        adam.update(&mut params, &g, 0.01).unwrap();
    }
    assert!(params.get(id)[[0, 0]] < 1.0);
    assert!(params.get(id)[[0, 1]] > -2.0);
}

#[test]
fn adam_rejects_nan_naming_tensor() {
    let mut params = ParamSet::<f32>::new();
    params.add("a", array![[1.0]]);
    params.add("lstm.wh", array![[1.0]]);
    let mut adam = Adam::new(&params, AdamConfig::default());
    let g = Grads {
        tensors: vec![array![[0.0]], array![[f32::NAN]]],
    };
    match adam.update(&mut params, &g, 0.1) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "lstm.wh"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn adam_descends_scalar_quadratic() {
    let mut params = ParamSet::<f64>::new();
    let id = params.add("x", array![[3.0]]);
    let mut adam = Adam::new(&params, AdamConfig::default());
    let mut losses = Vec::new();
    for _ in 0..200 {
        let x = params.get(id)[[0, 0]];
        losses.push(x * x);
        let g = Grads {
            tensors: vec![array![[2.0 * x]]],
        };
        adam.update(&mut params, &g, 0.01).unwrap();
    }
    assert!(losses.windows(2).skip(5).all(|w| w[1] < w[0]));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::<f32>::new();
    LstmStack::new(&mut params, &mut rng, "s", &[3], 4, 2).unwrap();
    let header = CheckpointHeader {
        kind: "pos-only".into(),
        model: serde_json::json!({"units": 4}),
        train: Some(TrainConfig::desk()),
        dataset_fingerprint: Some("abc".into()),
        loss_history: vec![0.5, 0.25],
        tensors: vec![],
    };
    let path = dir.path().join("m.hmbk");
    write_checkpoint(&path, &header, &params).unwrap();
    let (h, p) = read_checkpoint(&path).unwrap();
    assert_eq!(p, params);
    assert_eq!(h.kind, "pos-only");
    assert_eq!(h.tensors.len(), params.len());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
}
