use nbv_nn::{
    decode_weights, encode_weights, kl_standard_normal, reparam_sample, Activation, Adam, GaussianHead, LayerSpec,
    Network, NnError, TensorBuf, WeightFile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn identity_dense_layer() {
    let mut net = Network::<f32>::new(
        4,
        vec![
            LayerSpec::Dense { input: 4, output: 4 },
            LayerSpec::Activation(Activation::Identity),
        ],
    )
    .unwrap();
    let w = net.layer_params_mut(0);
    for i in 0..4 {
        w[i * 4 + i] = 1.0;
    }
    let x = TensorBuf::matrix(2, 4, vec![1.0, -2.0, 3.5, 0.0, 0.25, 9.0, -1.0, 2.0]);
    assert_eq!(net.forward(&x).unwrap(), x);
}

#[test]
fn zero_rate_dropout_matches_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Network::<f32>::mlp(5, &[6], 2, Activation::Relu, Activation::Identity, 0.0).unwrap();
    net.init_params(&mut rng);
    let mut specs = net.specs().to_vec();
    specs.insert(2, LayerSpec::Dropout { rate: 0.0 });
    let mut with_dropout = Network::<f32>::new(5, specs).unwrap();
    with_dropout.params_mut().copy_from_slice(net.params());
    let x = TensorBuf::matrix(3, 5, (0..15).map(|i| i as f32 * 0.1 - 0.7).collect());
    let eval = with_dropout.forward(&x).unwrap();
    let train = with_dropout.forward_train(&x, true, Some(&mut rng)).unwrap();
    assert_eq!(&eval, train.output());
}

#[test]
fn delta_kernel_conv_returns_interior() {
    let (c, h, w, k) = (2, 6, 5, 3);
    let mut net = Network::<f64>::new(
        c * h * w,
        vec![LayerSpec::Conv2d {
            in_channels: c,
            out_channels: c,
            kernel: k,
            stride: 1,
            height: h,
            width: w,
        }],
    )
    .unwrap();
    let p = net.layer_params_mut(0);
    for o in 0..c {
        // weight[o][o][1][1] = 1
        p[((o * c + o) * k + 1) * k + 1] = 1.0;
    }
    let x: Vec<f64> = (0..c * h * w).map(|i| i as f64).collect();
    let y = net.forward(&TensorBuf::matrix(1, c * h * w, x.clone())).unwrap();
    let (oh, ow) = (h - 2, w - 2);
    for ch in 0..c {
        for yy in 0..oh {
            for xx in 0..ow {
                assert_eq!(
                    y.data[ch * oh * ow + yy * ow + xx],
                    x[ch * h * w + (yy + 1) * w + xx + 1]
                );
            }
        }
    }
}

#[test]
fn shape_errors_name_the_layer() {
    let r = Network::<f32>::new(
        4,
        vec![
            LayerSpec::Dense { input: 4, output: 3 },
            LayerSpec::Dense { input: 4, output: 1 },
        ],
    );
    assert!(matches!(r, Err(NnError::Shape { layer: Some(1), .. })));
    let net = Network::<f32>::mlp(4, &[3], 1, Activation::Relu, Activation::Identity, 0.0).unwrap();
    let bad = TensorBuf::matrix(1, 5, vec![0.0; 5]);
    assert!(matches!(net.forward(&bad), Err(NnError::Shape { layer: Some(0), .. })));
    assert!(Network::<f32>::new(4, vec![LayerSpec::Dropout { rate: 1.0 }]).is_err());
}

#[test]
fn training_dropout_without_rng_is_a_contract_error() {
    let net = Network::<f32>::mlp(2, &[4], 1, Activation::Relu, Activation::Identity, 0.5).unwrap();
    let x = TensorBuf::matrix(1, 2, vec![0.5, 0.5]);
    assert!(matches!(net.forward_train(&x, true, None), Err(NnError::Contract(_))));
}

#[test]
fn dropout_scales_survivors() {
    let net = Network::<f64>::new(1000, vec![LayerSpec::Dropout { rate: 0.2 }]).unwrap();
    let x = TensorBuf::matrix(1, 1000, vec![1.0; 1000]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = net.forward_train(&x, true, Some(&mut rng)).unwrap();
    let dropped = c.output().data.iter().filter(|&&v| v == 0.0).count();
    assert!((150..250).contains(&dropped), "{dropped}");
    assert!(c.output().data.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
}

#[test]
fn eval_forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::<f32>::mlp(8, &[16, 16], 3, Activation::Relu, Activation::Identity, 0.2).unwrap();
    net.init_params(&mut rng);
    let x = TensorBuf::matrix(2, 8, (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 100_000;
    for _ in 0..20 {
        let d = 3;
        let head = GaussianHead::<f64> {
            mu: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            logvar: (0..d).map(|_| rng.random_range(-1.5..1.0)).collect(),
        };
        // KL = E_q[log q(z) - log p(z)], z ~ q.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (z, eps) = reparam_sample(&head, &mut rng);
            let mut log_ratio = 0.0;
            for i in 0..d {
                log_ratio += -0.5 * head.logvar[i] - 0.5 * eps[i] * eps[i] + 0.5 * z[i] * z[i];
            }
            sum += log_ratio;
            sum_sq += log_ratio * log_ratio;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let kl = kl_standard_normal(&head);
        assert!((kl - mean).abs() < 3.0 * se, "closed {kl} vs mc {mean} +- {se}");
    }
}

#[test]
fn reparam_moments_and_vanishing_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = GaussianHead::<f64> {
        mu: vec![0.0; 3],
        logvar: vec![0.0; 3],
    };
    let n = 10_000;
    let mut sums = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let (z, _) = reparam_sample(&head, &mut rng);
        for i in 0..3 {
            sums[i] += z[i];
            sq[i] += z[i] * z[i];
        }
    }
    for i in 0..3 {
        let m = sums[i] / n as f64;
        let v = sq[i] / n as f64 - m * m;
        assert!(m.abs() < 0.05 && (0.9..=1.1).contains(&v), "dim {i}: mean {m}, var {v}");
    }
    let narrow = GaussianHead::<f64>::from_row(&[0.7, -0.3, -1e9, -1e9]);
    let (z, eps) = reparam_sample(&narrow, &mut rng);
    for i in 0..2 {
        assert!((z[i] - narrow.mu[i]).abs() <= 1e-2 * eps[i].abs());
    }
    let a = reparam_sample(&head, &mut ChaCha8Rng::seed_from_u64(5));
    let b = reparam_sample(&head, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

#[test]
fn adam_runs_are_deterministic() {
    let run = || {
        let mut adam = Adam::<f32>::new(4, 1e-3);
        let mut p = vec![0.1f32, 0.2, -0.3, 0.4];
        for k in 0..10 {
            let g: Vec<f32> = p.iter().map(|v| v * 2.0 + k as f32 * 0.01).collect();
            adam.update(&mut p, &g).unwrap();
        }
        (p, adam.step)
    };
    assert_eq!(run(), run());
}

fn sample_file() -> WeightFile {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut a = Network::<f32>::mlp(4, &[5], 2, Activation::Relu, Activation::Softplus, 0.2).unwrap();
    a.init_params(&mut rng);
    let mut b = Network::<f32>::new(
        2 * 6 * 6,
        vec![
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 1,
                height: 6,
                width: 6,
            },
            LayerSpec::MaxPool2d {
                channels: 3,
                height: 4,
                width: 4,
                window: 2,
            },
            LayerSpec::Activation(Activation::Tanh),
        ],
    )
    .unwrap();
    b.init_params(&mut rng);
    WeightFile {
        kind: "test".into(),
        metadata: b"{\"k\":1}".to_vec(),
        networks: vec![a, b],
    }
}

#[test]
fn weight_file_round_trip() {
    let f = sample_file();
    let bytes = encode_weights(&f);
    assert_eq!(decode_weights(&bytes).unwrap(), f);
}

#[test]
fn weight_file_rejects_corruption_and_versions() {
    let f = sample_file();
    let mut bytes = encode_weights(&f);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(decode_weights(&bytes), Err(NnError::Format(_))));
    let mut bytes = encode_weights(&f);
    bytes[4] = 9;
    assert!(matches!(decode_weights(&bytes), Err(NnError::Version { found: 9, .. })));
    let bytes = encode_weights(&f);
    assert!(decode_weights(&bytes[..bytes.len() - 10]).is_err());
}
