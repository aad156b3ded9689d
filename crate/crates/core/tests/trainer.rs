use irfusion_core::io::{decode_checkpoint, encode_checkpoint, Checkpoint};
use irfusion_core::metrics::{self, WindowConfig};
use irfusion_core::model::{build_network, NetConfig};
use irfusion_core::trainer::*;
use irfusion_core::{Error, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn scalar(v: f64) -> Tensor {
    Tensor::full(Shape::new(1, 1, 1, 1), v)
}

fn step(theta: &mut Tensor, g: f64, state: &mut OptimState, lr: f64) {
    let grad = scalar(g);
    adam_step(&mut [theta], &[&grad], state, lr).unwrap();
}

#[test]
fn schedule_milestones() {
    let s = Schedule::default();
    let got: Vec<f64> = [0, 10, 20, 30].iter().map(|&e| lr_at(e, &s)).collect();
    assert_eq!(got, vec![0.001, 0.0005, 0.00025, 0.000125]);
    assert_eq!(lr_at(9, &s), 0.001);
    assert_eq!(lr_at(19, &s), 0.0005);
    assert_eq!(lr_at(100, &s), 0.000125);
}

#[test]
fn adam_first_step_is_signed_lr() {
    for g in [3.0, -0.02, 1e-3] {
        let mut theta = scalar(0.5);
        let mut st = OptimState::new([theta.shape()]);
        step(&mut theta, g, &mut st, 1e-3);
        let expect = 0.5 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((theta.data()[0] - expect).abs() < 1e-15);
        assert!((theta.data()[0] - (0.5 - 1e-3 * g.signum())).abs() < 1e-8);
    }
}

#[test]
fn adam_two_step_trace() {
    let (lr, g1, g2, theta0) = (0.01, 0.4, -1.3, 2.0);
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.99, 1e-8);
    let m1 = (1.0 - b1) * g1;
    let v1 = (1.0 - b2) * g1 * g1;
    let theta1 = theta0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let m2 = b1 * m1 + (1.0 - b1) * g2;
    let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
    let theta2 = theta1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

    let mut theta = scalar(theta0);
    let mut st = OptimState::new([theta.shape()]);
    step(&mut theta, g1, &mut st, lr);
    assert!((theta.data()[0] - theta1).abs() < 1e-12);
    step(&mut theta, g2, &mut st, lr);
    assert!((theta.data()[0] - theta2).abs() < 1e-12);
    assert_eq!(st.t, 2);
    assert!((st.m[0].data()[0] - m2).abs() < 1e-15);
    assert!((st.v[0].data()[0] - v2).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut theta = scalar(0.7);
    let mut st = OptimState::new([theta.shape()]);
    for _ in 0..100 {
        step(&mut theta, 0.0, &mut st, 1e-3);
    }
    assert_eq!(theta.data()[0], 0.7);
    assert_eq!(st.t, 100);
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut theta = scalar(1.0);
    let mut st = OptimState::new([theta.shape()]);
    for _ in 0..5000 {
        let g = 2.0 * theta.data()[0];
        step(&mut theta, g, &mut st, 1e-3);
        assert!(st.v[0].data()[0] >= 0.0);
    }
    assert!(theta.data()[0].abs() < 1e-3, "{}", theta.data()[0]);
}

#[test]
fn adam_rejects_non_finite_gradients_untouched() {
    let mut theta = scalar(1.0);
    let mut st = OptimState::new([theta.shape()]);
    let bad = scalar(f64::NAN);
    let err = adam_step(&mut [&mut theta], &[&bad], &mut st, 1e-3).unwrap_err();
    assert!(matches!(err, Error::Training(_)));
    assert_eq!(theta.data()[0], 1.0);
    assert_eq!(st.t, 0);
}

fn white_noise(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vis = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, _, _, _| rng.random_range(0.0..1.0));
    let ir = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, _, _| rng.random_range(0.0..1.0));
    (vis, ir)
}

fn variance(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let m = t.data().iter().sum::<f64>() / n;
    t.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

#[test]
fn augmentation_identity_and_determinism() {
    let (vis, ir) = white_noise(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (v, r) = augment(&vis, &ir, &AugmentConfig::identity(), &mut rng);
    assert_eq!((v, r), (vis.clone(), ir.clone()));

    let cfg = AugmentConfig { blur_probability: 1.0, noise_probability: 1.0, ..AugmentConfig::default() };
    let a = augment(&vis, &ir, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
    let b = augment(&vis, &ir, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    assert_ne!(a.0, vis);
    assert!(a.0.data().iter().chain(a.1.data()).all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn blur_reduces_variance_of_noise() {
    let (vis, _) = white_noise(2);
    let blurred = gaussian_blur(&vis, 1.0);
    assert!(variance(&blurred) < variance(&vis));
    let constant = Tensor::full(Shape::new(1, 1, 9, 9), 0.3);
    for x in gaussian_blur(&constant, 1.5).data() {
        assert!((x - 0.3).abs() < 1e-12);
    }
    assert!(AugmentConfig { blur_sigma: (1.0, 0.5), ..AugmentConfig::default() }.validate().is_err());
}

#[test]
fn normalization_endpoints_and_round_trip() {
    let t = Tensor::new(Shape::new(1, 1, 1, 5), vec![0.0, 0.5, 1.0, -0.2, 1.3]).unwrap();
    assert_eq!(normalize(&t).data(), &[-1.0, 0.0, 1.0, -1.0, 1.0]);
    let (vis, _) = white_noise(3);
    for (a, b) in denormalize(&normalize(&vis)).data().iter().zip(vis.data()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

/// Windowed variances (8×8, stride 4) of luminance and infrared.
fn window_variances(pair: &Pair) -> Vec<(f64, f64)> {
    let y = metrics::luminance(&pair.vis).unwrap();
    let s = y.shape();
    let var = |t: &Tensor, r: usize, c: usize| {
        let v: Vec<f64> = (0..64).map(|k| t.at(0, 0, r + k / 8, c + k % 8)).collect();
        let m = v.iter().sum::<f64>() / 64.0;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 64.0
    };
    let mut out = Vec::new();
    for r in (0..=s.h() - 8).step_by(4) {
        for c in (0..=s.w() - 8).step_by(4) {
            out.push((var(&y, r, c), var(&pair.ir, r, c)));
        }
    }
    out
}

#[test]
fn synthetic_pairs_contract() {
    let data = synth_pairs(32, 64, 7).unwrap();
    assert_eq!(data.len(), 32);
    for p in &data {
        assert_eq!(p.vis.shape(), Shape::new(1, 3, 64, 64));
        assert_eq!(p.ir.shape(), Shape::new(1, 1, 64, 64));
        assert!(p.vis.data().iter().chain(p.ir.data()).all(|x| (0.0..=1.0).contains(x)));
        let w = window_variances(p);
        assert!(w.iter().any(|&(v, i)| i > 1e-3 && i > 10.0 * v), "no infrared-only structure");
        assert!(w.iter().any(|&(v, i)| v > 1e-3 && v > 10.0 * i), "no visible-only structure");
    }
    assert_eq!(data, synth_pairs(32, 64, 7).unwrap());
    assert_ne!(data[0], synth_pairs(1, 64, 8).unwrap()[0]);
    assert!(synth_pairs(4, 48, 0).is_err());
    assert!(synth_pairs(0, 64, 0).is_err());
}

#[test]
fn split_is_seeded_partition() {
    let s = split(32, 0.125, 7);
    assert_eq!(s.heldout.len(), 4);
    assert_eq!(s.train.len(), 28);
    let mut all: Vec<usize> = s.train.iter().chain(&s.heldout).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..32).collect::<Vec<_>>());
    assert_eq!(s, split(32, 0.125, 7));
    assert_eq!(split(1, 0.5, 0).train, vec![0]);
}

fn tiny_setup(seed: u64) -> (irfusion_core::model::FusionNet, Vec<Pair>, TrainConfig) {
    let net = build_network(NetConfig { base_channels: 4, levels: 3, ..NetConfig::default() }, seed).unwrap();
    let data = synth_pairs(6, 32, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed,
        heldout_fraction: 0.34,
        eval_stride: 4,
        ..TrainConfig::default()
    };
    (net, data, cfg)
}

#[test]
fn zero_epochs_changes_nothing() {
    let (mut net, data, mut cfg) = tiny_setup(1);
    cfg.epochs = 0;
    let before = net.clone();
    let log = fit(&mut net, &data, &cfg, None, |_| Ok(())).unwrap();
    assert!(log.is_empty());
    assert_eq!(net, before);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let (mut net, data, cfg) = tiny_setup(2);
        let log = fit(&mut net, &data, &cfg, None, |_| Ok(())).unwrap();
        (net, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.len(), 3);
    assert_eq!(la.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn resume_replays_the_trajectory_bitwise() {
    let (mut straight, data, mut cfg) = tiny_setup(3);
    cfg.epochs = 4;
    let full_log = fit(&mut straight, &data, &cfg, None, |_| Ok(())).unwrap();

    let (mut first, _, _) = tiny_setup(3);
    let mut saved: Option<Vec<u8>> = None;
    let half = TrainConfig { epochs: 2, ..cfg.clone() };
    fit(&mut first, &data, &half, None, |ck| {
        saved = Some(encode_checkpoint(ck));
        Ok(())
    })
    .unwrap();
    let ck: Checkpoint = decode_checkpoint(&saved.unwrap(), Path::new("mem")).unwrap();
    assert_eq!(ck.epoch, 2);

    let (mut resumed, _, _) = tiny_setup(99);
    let log = fit(&mut resumed, &data, &cfg, Some(ck), |_| Ok(())).unwrap();
    assert_eq!(resumed, straight);
    assert_eq!(log, full_log);
}

#[test]
fn resume_with_a_different_seed_is_refused() {
    let (mut net, data, cfg) = tiny_setup(4);
    let mut last = None;
    fit(&mut net, &data, &TrainConfig { epochs: 1, ..cfg.clone() }, None, |ck| {
        last = Some(ck.clone());
        Ok(())
    })
    .unwrap();
    let other = TrainConfig { seed: 5, ..cfg };
    assert!(matches!(fit(&mut net, &data, &other, last, |_| Ok(())), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts_and_restores() {
    let (mut net, data, cfg) = tiny_setup(5);
    net.parameter_mut("dec.0.conv.bias").unwrap().data_mut()[0] = f64::NAN;
    let before = net.clone();
    let mut calls = 0;
    let err = fit(&mut net, &data, &cfg, None, |_| {
        calls += 1;
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, Error::Training(_)), "{err}");
    assert_eq!(calls, 0);
    assert_eq!(format!("{net:?}"), format!("{before:?}"));
}

#[test]
fn training_lowers_heldout_loss_across_seeds() {
    let mut improved = 0;
    for seed in 0..10 {
        let (mut net, data, cfg) = tiny_setup(100 + seed);
        let parts = split(data.len(), cfg.heldout_fraction, cfg.seed);
        let held: Vec<&Pair> = parts.heldout.iter().map(|&i| &data[i]).collect();
        let eval_loss = irfusion_core::loss::LossConfig { window: cfg.eval_window(), ..cfg.loss };
        let before = evaluate(&net, &held, &eval_loss).unwrap().loss;
        let log = fit(&mut net, &data, &cfg, None, |_| Ok(())).unwrap();
        let after = log.last().unwrap().heldout_loss;
        assert_eq!(after, evaluate(&net, &held, &eval_loss).unwrap().loss);
        if after < before {
            improved += 1;
        }
    }
    assert!(improved >= 10, "improved in {improved} of 10 seeds");
}

#[test]
fn average_fusion_baseline_is_bounded() {
    let pair = &synth_pairs(1, 32, 0).unwrap()[0];
    let q = average_fusion_qw(pair, &WindowConfig::default()).unwrap();
    assert!(q > 0.0 && q < 1.0);
}

#[test]
fn invalid_training_configs_are_rejected() {
    let (mut net, data, cfg) = tiny_setup(0);
    for bad in [
        TrainConfig { batch_size: 0, ..cfg.clone() },
        TrainConfig { heldout_fraction: 1.0, ..cfg.clone() },
        TrainConfig { eval_stride: 0, ..cfg.clone() },
    ] {
        assert!(matches!(fit(&mut net, &data, &bad, None, |_| Ok(())), Err(Error::Config(_))));
    }
    assert!(fit(&mut net, &[], &cfg, None, |_| Ok(())).is_err());
}
