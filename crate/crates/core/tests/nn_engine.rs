use moodtune::nn::{
    self, grad_check, grad_check_with, loss_cross_entropy, train, Checkpoint, GradCheckOptions,
    Gradients, LayerSpec, Model, NnError, Sgd, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn set_params(model: &Model, params: Vec<Vec<Tensor<f32>>>) -> Model {
    Model::from_parts(
        model.input_shape().to_vec(),
        model.layers().to_vec(),
        params,
        model.seed(),
    )
    .unwrap()
}

#[test]
fn identity_conv2d_kernel() {
    let model = Model::new(
        vec![1, 3, 3],
        vec![LayerSpec::Conv2d {
            in_channels: 1,
            filters: 1,
            kernel: 1,
        }],
        0,
    )
    .unwrap();
    let model = set_params(
        &model,
        vec![vec![
            Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        ]],
    );
    let x = random_tensor(&[1, 3, 3], 7);
    assert_eq!(model.forward(&x).unwrap(), x);
}

#[test]
fn maxpool_takes_window_max() {
    let model = Model::new(vec![1, 2, 2], vec![LayerSpec::MaxPool2d { window: 2 }], 0).unwrap();
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = model.forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1]);
    assert_eq!(y.data(), &[4.0]);
}

#[test]
fn softmax_of_zero_logits_is_uniform() {
    let model = Model::new(vec![5], vec![LayerSpec::Softmax], 0).unwrap();
    let y = model.forward(&Tensor::zeros(&[5])).unwrap();
    for p in y.data() {
        assert!((p - 0.2).abs() < 1e-7);
    }
}

#[test]
fn softmax_sums_to_one_for_bounded_logits() {
    let model = Model::new(vec![5], vec![LayerSpec::Softmax], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let logits: Vec<f32> = (0..5).map(|_| rng.random_range(-50.0..=50.0)).collect();
        let y = model.forward(&Tensor::vector(logits)).unwrap();
        let s: f64 = y.data().iter().map(|v| *v as f64).sum();
        assert!((s - 1.0).abs() <= 1e-6, "sum {s}");
        assert!(y.is_finite());
    }
}

#[test]
fn shape_mismatch_reports_layer() {
    let err = Model::new(
        vec![10],
        vec![
            LayerSpec::Dense {
                inputs: 10,
                outputs: 4,
            },
            LayerSpec::Dense {
                inputs: 5,
                outputs: 2,
            },
        ],
        0,
    )
    .unwrap_err();
    assert!(matches!(err, NnError::ShapeMismatch { layer: 1, .. }), "{err}");

    let model = Model::new(vec![3], vec![LayerSpec::Softmax], 0).unwrap();
    assert!(matches!(
        model.forward(&Tensor::zeros(&[4])),
        Err(NnError::ShapeMismatch { layer: 0, .. })
    ));
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let model = Model::new(vec![2], vec![LayerSpec::Embedding { vocab: 3, dim: 2 }], 0).unwrap();
    assert!(model.forward(&Tensor::vector(vec![0.0, 2.0])).is_ok());
    assert!(model.forward(&Tensor::vector(vec![0.0, 3.0])).is_err());
    assert!(model.forward(&Tensor::vector(vec![0.5, 1.0])).is_err());
}

#[test]
fn cross_entropy_values() {
    let uniform = Tensor::vector(vec![0.2f64; 5]);
    for c in 0..5 {
        assert!((loss_cross_entropy(&uniform, c).unwrap() - 5f64.ln()).abs() < 1e-12);
    }
    let sure = Tensor::vector(vec![0.0f64, 1.0, 0.0]);
    assert_eq!(loss_cross_entropy(&sure, 1).unwrap(), 0.0);
    let quarter = Tensor::vector(vec![0.25f64, 0.75]);
    assert!((loss_cross_entropy(&quarter, 0).unwrap() - 1.3862943611198906).abs() < 1e-12);
    // clamped, not infinite
    assert!((loss_cross_entropy(&sure, 0).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
    assert!(matches!(
        loss_cross_entropy(&sure, 3),
        Err(NnError::IndexOutOfRange { index: 3, len: 3 })
    ));
}

#[test]
fn zero_input_dense_gradients() {
    let model = Model::new(
        vec![4],
        vec![
            LayerSpec::Dense {
                inputs: 4,
                outputs: 5,
            },
            LayerSpec::Softmax,
        ],
        11,
    )
    .unwrap();
    let x = Tensor::zeros(&[4]);
    let probs = model.forward(&x).unwrap();
    let (_, grads) = model.backward(&x, 2).unwrap();
    assert!(grads.per_layer[0][0].data().iter().all(|g| *g == 0.0));
    for (i, (g, p)) in grads.per_layer[0][1].data().iter().zip(probs.data()).enumerate() {
        let expected = p - if i == 2 { 1.0 } else { 0.0 };
        assert!((g - expected).abs() < 1e-6);
    }
}

#[test]
fn duplicated_sample_doubles_summed_gradient() {
    let model = Model::new(
        vec![6],
        vec![
            LayerSpec::Dense {
                inputs: 6,
                outputs: 5,
            },
            LayerSpec::Softmax,
        ],
        5,
    )
    .unwrap();
    let sample = (random_tensor(&[6], 1), 3usize);
    let (l1, g1) = nn::batch_gradients(&model, &[&sample]).unwrap();
    let (l2, g2) = nn::batch_gradients(&model, &[&sample, &sample]).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-9);
    for (a, b) in g1.per_layer.iter().flatten().zip(g2.per_layer.iter().flatten()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

fn scalar_model(p: f32) -> Model {
    let m = Model::new(
        vec![1],
        vec![LayerSpec::Dense {
            inputs: 1,
            outputs: 1,
        }],
        0,
    )
    .unwrap();
    set_params(
        &m,
        vec![vec![Tensor::new(vec![1, 1], vec![p]).unwrap(), Tensor::zeros(&[1])]],
    )
}

fn scalar_grad(g: f32) -> Gradients {
    Gradients {
        per_layer: vec![vec![Tensor::new(vec![1, 1], vec![g]).unwrap(), Tensor::zeros(&[1])]],
    }
}

#[test]
fn sgd_zero_learning_rate_is_noop() {
    let mut model = nn::mood_image_model(1).unwrap();
    let before = model.clone();
    let x = random_tensor(&[1, 48, 48], 2).cast::<f32>();
    let (_, grads) = model.backward(&x, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    Sgd::new(&cfg).step(&mut model, &grads).unwrap();
    assert_eq!(model, before);
}

#[test]
fn sgd_plain_step() {
    let mut model = scalar_model(1.0);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        momentum: 0.0,
        ..TrainConfig::default()
    };
    Sgd::new(&cfg).step(&mut model, &scalar_grad(0.5)).unwrap();
    assert!((model.params()[0][0].data()[0] - 0.95).abs() < 1e-7);
}

#[test]
fn sgd_momentum_recurrence() {
    let mut model = scalar_model(0.0);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        momentum: 0.9,
        ..TrainConfig::default()
    };
    let mut sgd = Sgd::new(&cfg);
    let g = 0.5f32;
    sgd.step(&mut model, &scalar_grad(g)).unwrap();
    let after_first = model.params()[0][0].data()[0];
    sgd.step(&mut model, &scalar_grad(g)).unwrap();
    let second_update = after_first - model.params()[0][0].data()[0];
    assert!((second_update - 0.1 * 1.9 * g).abs() < 1e-7);
}

#[test]
fn sgd_rejects_mismatched_gradients() {
    let mut model = scalar_model(0.0);
    let bad = Gradients {
        per_layer: vec![vec![Tensor::zeros(&[2, 1]), Tensor::zeros(&[1])]],
    };
    assert!(Sgd::new(&TrainConfig::default()).step(&mut model, &bad).is_err());
}

fn toy_dataset() -> Vec<(Tensor<f32>, usize)> {
    // two Gaussian-free clusters split by the sign of x0 + x1
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..20)
        .map(|i| {
            let class = i % 2;
            let sign = if class == 0 { 1.0 } else { -1.0 };
            let x = vec![
                sign * rng.random_range(0.5..1.5f32),
                sign * rng.random_range(0.5..1.5f32),
            ];
            (Tensor::vector(x), class)
        })
        .collect()
}

fn toy_model(seed: u64) -> Model {
    Model::new(
        vec![2],
        vec![
            LayerSpec::Dense {
                inputs: 2,
                outputs: 2,
            },
            LayerSpec::Softmax,
        ],
        seed,
    )
    .unwrap()
}

#[test]
fn training_with_zero_lr_changes_nothing() {
    let data = toy_dataset();
    let model = toy_model(4);
    let initial_loss = nn::mean_loss(&model, &data).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..TrainConfig::default()
    };
    let (trained, hist) = train(model.clone(), &data, &cfg).unwrap();
    assert_eq!(trained, model);
    assert_eq!(hist.len(), 1);
    assert!((hist[0] - initial_loss).abs() < 1e-9);
}

#[test]
fn training_is_deterministic() {
    let data = toy_dataset();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        seed: 17,
        ..TrainConfig::default()
    };
    let (a, ha) = train(toy_model(1), &data, &cfg).unwrap();
    let (b, hb) = train(toy_model(1), &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(toy_model(1), toy_model(1));
    assert_ne!(toy_model(1), toy_model(2));
}

#[test]
fn training_reduces_loss_on_separable_toy() {
    let data = toy_dataset();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (_, hist) = train(toy_model(3), &data, &cfg).unwrap();
    assert_eq!(hist.len(), 50);
    assert!(hist[49] < hist[0], "{} !< {}", hist[49], hist[0]);
    assert!(hist.iter().all(|l| l.is_finite()));
}

#[test]
fn training_errors() {
    assert!(matches!(
        train(toy_model(0), &[], &TrainConfig::default()),
        Err(NnError::EmptyDataset)
    ));
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train(toy_model(0), &toy_dataset(), &bad).is_err());
}

// Each layer kind in isolation, wrapped by the minimum needed to produce a
// probability vector.
fn isolated_models() -> Vec<(&'static str, Model, Tensor<f32>)> {
    let dense = |i, o| LayerSpec::Dense {
        inputs: i,
        outputs: o,
    };
    let ids = Tensor::vector(vec![2.0, 0.0, 3.0, 3.0, 1.0, 4.0]);
    vec![
        (
            "dense",
            Model::new(vec![6], vec![dense(6, 5), LayerSpec::Softmax], 1).unwrap(),
            random_tensor(&[6], 10),
        ),
        (
            "relu",
            Model::new(
                vec![6],
                vec![dense(6, 8), LayerSpec::Relu, dense(8, 5), LayerSpec::Softmax],
                2,
            )
            .unwrap(),
            random_tensor(&[6], 11),
        ),
        (
            "embedding",
            Model::new(
                vec![6],
                vec![
                    LayerSpec::Embedding { vocab: 5, dim: 4 },
                    dense(24, 5),
                    LayerSpec::Softmax,
                ],
                3,
            )
            .unwrap(),
            ids.clone(),
        ),
        (
            "conv1d",
            Model::new(
                vec![7, 3],
                vec![
                    LayerSpec::Conv1d {
                        in_channels: 3,
                        filters: 4,
                        width: 3,
                    },
                    dense(20, 5),
                    LayerSpec::Softmax,
                ],
                4,
            )
            .unwrap(),
            random_tensor(&[7, 3], 12),
        ),
        (
            "conv2d",
            Model::new(
                vec![2, 6, 6],
                vec![
                    LayerSpec::Conv2d {
                        in_channels: 2,
                        filters: 3,
                        kernel: 3,
                    },
                    dense(48, 5),
                    LayerSpec::Softmax,
                ],
                5,
            )
            .unwrap(),
            random_tensor(&[2, 6, 6], 13),
        ),
        (
            "maxpool2d",
            Model::new(
                vec![2, 6, 6],
                vec![LayerSpec::MaxPool2d { window: 2 }, dense(18, 5), LayerSpec::Softmax],
                6,
            )
            .unwrap(),
            random_tensor(&[2, 6, 6], 14),
        ),
        (
            "global_maxpool",
            Model::new(
                vec![7, 3],
                vec![
                    LayerSpec::Conv1d {
                        in_channels: 3,
                        filters: 4,
                        width: 2,
                    },
                    LayerSpec::GlobalMaxPool,
                    dense(4, 5),
                    LayerSpec::Softmax,
                ],
                7,
            )
            .unwrap(),
            random_tensor(&[7, 3], 15),
        ),
        (
            "softmax",
            Model::new(vec![6], vec![dense(6, 5), LayerSpec::Softmax], 8).unwrap(),
            random_tensor(&[6], 16),
        ),
        (
            "conv2d+pool",
            Model::new(
                vec![1, 8, 8],
                vec![
                    LayerSpec::Conv2d {
                        in_channels: 1,
                        filters: 3,
                        kernel: 3,
                    },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { window: 2 },
                    dense(27, 5),
                    LayerSpec::Softmax,
                ],
                9,
            )
            .unwrap(),
            random_tensor(&[1, 8, 8], 17),
        ),
    ]
}

#[test]
fn grad_check_every_layer_kind() {
    for (name, model, x) in isolated_models() {
        for class in 0..5 {
            let err = grad_check(&model, &x, class, 1e-3).unwrap();
            assert!(err <= 1e-3, "{name} class {class}: {err}");
        }
    }
}

#[test]
fn grad_check_small_text_model() {
    let model = nn::lyric_model(12, 10, 21).unwrap();
    let ids: Vec<f32> = vec![2.0, 5.0, 7.0, 11.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let report = grad_check_with(&model, &Tensor::vector(ids), 3, &GradCheckOptions::default())
        .unwrap();
    assert!(report.max_relative_error <= 1e-3, "{report:?}");
    let total = report.checked + report.kinks;
    assert_eq!(total, model.num_parameters());
    assert!(report.kinks * 100 <= total, "too many kinks: {report:?}");
}

#[test]
fn grad_check_sampling_counts() {
    let (_, model, x) = isolated_models().remove(0);
    let opts = GradCheckOptions {
        epsilon: 1e-3,
        max_per_tensor: Some(3),
    };
    let report = grad_check_with(&model, &x, 0, &opts).unwrap();
    assert_eq!(report.checked, 3 + 3);
    assert!(grad_check(&model, &x, 0, 0.0).is_err());
}

#[test]
fn checkpoint_roundtrip_reproduces_outputs() {
    let model = nn::lyric_model(30, 16, 5).unwrap();
    let mut ckpt = Checkpoint::new(model.clone());
    ckpt.meta.insert("seq_len".into(), "16".into());
    let bytes = ckpt.to_bytes().unwrap();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded, ckpt);
    let x = Tensor::vector((0..16).map(|i| (i % 30) as f32).collect());
    assert_eq!(
        loaded.model.forward(&x).unwrap().data(),
        model.forward(&x).unwrap().data()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let image = Checkpoint::new(nn::mood_image_model(2).unwrap());
    image.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), image);
}

#[test]
fn checkpoint_manifest_layout() {
    let model = Model::new(
        vec![3],
        vec![
            LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            },
            LayerSpec::Softmax,
        ],
        9,
    )
    .unwrap();
    let bytes = Checkpoint::new(model.clone()).to_bytes().unwrap();
    let header = "moodtune-checkpoint 1\nseed 9\ninput 3\nlayer dense in=3 out=2\nlayer softmax\n\
                  param 0 0 2x3 offset=0 count=6\nparam 0 1 2 offset=24 count=2\nend\n";
    assert_eq!(&bytes[..header.len()], header.as_bytes());
    assert_eq!(bytes.len(), header.len() + 8 * 4);
    let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
    assert_eq!(first, model.params()[0][0].data()[0]);

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"garbage\nend\n").is_err());
}

