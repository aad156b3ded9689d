mod common;

use common::*;
use irfusion_core::io::save_weights;
use irfusion_core::loss::LossConfig;
use irfusion_core::model::{build_network, NetConfig};
use irfusion_core::trainer::{fit, AugmentConfig, Pair, Schedule, TrainConfig};
use irfusion_cli::image_io::{load_image, save_image};

#[test]
fn identity_trained_toy_net_reproduces_its_input() {
    let pairs: Vec<Pair> = (0..12)
        .map(|s| {
            let g = smooth(1, 32, 32, s);
            Pair::new(gray_to_rgb(&g), g).unwrap()
        })
        .collect();
    let net_cfg = NetConfig {
        base_channels: 8,
        levels: 2,
        ..NetConfig::default()
    };
    let mut net = build_network(net_cfg, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        seed: 3,
        schedule: Schedule {
            base_lr: 3e-3,
            milestones: vec![30],
            factor: 0.3,
        },
        augment: AugmentConfig::identity(),
        loss: LossConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            ..LossConfig::default()
        },
        heldout_fraction: 0.0,
        ..TrainConfig::default()
    };
    fit(&mut net, &pairs, &cfg, None, |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("toy.fsn");
    save_weights(&net, &weights).unwrap();
    let g = smooth(1, 40, 52, 99);
    let (vis, ir, out) = (dir.path().join("v.png"), dir.path().join("i.png"), dir.path().join("f.png"));
    save_image(&gray_to_rgb(&g), &vis).unwrap();
    save_image(&g, &ir).unwrap();
    let o = irfusion(&[
        "fuse",
        "--vis",
        vis.to_str().unwrap(),
        "--ir",
        ir.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fused = load_image(&out).unwrap();
    let input = load_image(&vis).unwrap();
    assert_eq!(fused.shape(), input.shape());
    let mad = fused
        .data()
        .iter()
        .zip(input.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / fused.len() as f64;
    println!("toy identity mean abs diff {mad:.4}");
    assert!(mad < 0.1, "mean abs diff {mad}");
}
