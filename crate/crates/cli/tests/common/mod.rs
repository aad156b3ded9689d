#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use irfusion_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn irfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irfusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Low-frequency image in roughly [0.2, 0.8]: a sum of two slow cosines.
pub fn smooth(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..2 * c)
        .map(|_| {
            (
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
                rng.random_range(0.0..6.3),
                rng.random_range(0.05..0.15),
            )
        })
        .collect();
    Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
        0.5 + waves[2 * ch..2 * ch + 2]
            .iter()
            .map(|(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * u + fx * v) + ph).cos())
            .sum::<f64>()
    })
}

pub fn gray_to_rgb(g: &Tensor) -> Tensor {
    let s = g.shape();
    Tensor::from_fn(Shape::new(1, 3, s.h(), s.w()), |_, _, y, x| g.at(0, 0, y, x))
}

pub fn write_config(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}
