use irfusion_core::metrics::{self, expr, EdgeConfig, WindowConfig};
use irfusion_core::tensor::gradcheck::GradCheck;
use irfusion_core::{Graph, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise over a random smooth ramp, clamped to [0, 1].
fn image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gx, gy, base): (f64, f64, f64) = (
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.3..0.7),
    );
    let amp: f64 = rng.random_range(0.05..0.3);
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        let ramp = base + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
        (ramp + amp * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)
    })
}

/// Q0 straight from its definition, two-pass statistics, floored denominators.
fn oracle_q0(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let (sx, sy) = (vx.sqrt(), vy.sqrt());
    (cxy / (sx * sy).max(eps))
        * (2.0 * mx * my / (mx * mx + my * my).max(eps))
        * (2.0 * sx * sy / (vx + vy).max(eps))
}

fn window(t: &Tensor, y: usize, x: usize, k: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            v.push(t.at(0, 0, y + i, x + j));
        }
    }
    v
}

/// Per-window double loop over every window position.
fn oracle_qw(a: &Tensor, b: &Tensor, f: &Tensor, cfg: &WindowConfig) -> f64 {
    let (h, w) = (a.shape().h(), a.shape().w());
    let k = cfg.window_size;
    let eps = cfg.epsilon;
    let (mut total, mut count) = (0.0, 0usize);
    let mut y = 0;
    while y + k <= h {
        let mut x = 0;
        while x + k <= w {
            let (wa, wb, wf) = (window(a, y, x, k), window(b, y, x, k), window(f, y, x, k));
            let sd = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (v.iter().map(|p| (p - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
            };
            let (sa, sb) = (sd(&wa), sd(&wb));
            let lambda = (sa + eps / 2.0) / (sa + sb + eps);
            total += lambda * oracle_q0(&wa, &wf, eps) + (1.0 - lambda) * oracle_q0(&wb, &wf, eps);
            count += 1;
            x += cfg.stride;
        }
        y += cfg.stride;
    }
    total / count as f64
}

/// Direct 3×3 correlation with the textbook kernels and replicated borders.
fn oracle_sobel(t: &Tensor) -> Tensor {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (h, w) = (t.shape().h() as isize, t.shape().w() as isize);
    let mag = Tensor::from_fn(t.shape(), |_, _, y, x| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for i in 0..3isize {
            for j in 0..3isize {
                let yy = (y as isize + i - 1).clamp(0, h - 1) as usize;
                let xx = (x as isize + j - 1).clamp(0, w - 1) as usize;
                let v = t.at(0, 0, yy, xx);
                gx += kx[i as usize][j as usize] * v;
                gy += ky[i as usize][j as usize] * v;
            }
        }
        f64::sqrt(gx * gx + gy * gy)
    });
    let peak = mag.data().iter().cloned().fold(0.0, f64::max);
    mag.map(|v| if peak > 0.0 { v / peak } else { 0.0 })
}

fn triple(seed: u64, h: usize, w: usize) -> (Tensor, Tensor, Tensor) {
    (image(h, w, seed), image(h, w, seed + 1000), image(h, w, seed + 2000))
}

#[test]
fn qw_matches_window_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..50 {
        let h = rng.random_range(32..=64);
        let w = rng.random_range(32..=64);
        let (a, b, f) = triple(seed, h, w);
        for stride in [1, 3] {
            let cfg = WindowConfig::default().with_stride(stride);
            let fast = metrics::qw(&a, &b, &f, &cfg).unwrap();
            let slow = oracle_qw(&a, &b, &f, &cfg);
            assert!((fast - slow).abs() < 1e-9, "seed {seed} {h}×{w}: {fast} vs {slow}");
        }
    }
}

#[test]
fn qe_is_qw_of_oracle_edge_maps() {
    let cfg = WindowConfig::default();
    for seed in 0..10 {
        let (a, b, f) = triple(seed, 32, 40);
        let fast = metrics::qe(&a, &b, &f, &cfg, &EdgeConfig::default()).unwrap();
        let slow = oracle_qw(&oracle_sobel(&a), &oracle_sobel(&b), &oracle_sobel(&f), &cfg);
        assert!((fast - slow).abs() < 1e-12, "seed {seed}: {fast} vs {slow}");
    }
}

#[test]
fn sobel_matches_direct_correlation() {
    for seed in 0..5 {
        let a = image(17, 23, seed);
        let e = metrics::sobel_edge_map(&a).unwrap();
        let o = oracle_sobel(&a);
        for (x, y) in e.data().iter().zip(o.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_fusion_identities() {
    let cfg = WindowConfig::default();
    for seed in 0..10 {
        let a = image(32, 32, seed);
        let qw = metrics::qw(&a, &a, &a, &cfg).unwrap();
        let qe = metrics::qe(&a, &a, &a, &cfg, &EdgeConfig::default()).unwrap();
        assert!((qw - 1.0).abs() < 1e-9, "qw {qw}");
        assert!((qe - 1.0).abs() < 1e-9, "qe {qe}");
    }
}

#[test]
fn qw_is_symmetric_in_sources() {
    let cfg = WindowConfig::default();
    for seed in 0..10 {
        let (a, b, f) = triple(seed, 32, 48);
        let ab = metrics::qw(&a, &b, &f, &cfg).unwrap();
        let ba = metrics::qw(&b, &a, &f, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn constant_images_give_finite_qe() {
    let cfg = WindowConfig::default();
    for v in [0.0, 0.5, 1.0] {
        let c = Tensor::full(Shape::new(1, 1, 16, 16), v);
        let qe = metrics::qe(&c, &c, &c, &cfg, &EdgeConfig::default()).unwrap();
        assert!(qe.is_finite() && (-1.0..=1.0).contains(&qe), "{qe}");
        let qw = metrics::qw(&c, &c, &c, &cfg).unwrap();
        assert!(qw.is_finite() && (-1.0..=1.0).contains(&qw));
    }
}

#[test]
fn mse_matches_loop() {
    for seed in 0..5 {
        let x = Tensor::from_fn(Shape::new(1, 3, 9, 7), |_, c, h, w| ((seed as usize + c * 31 + h * 7 + w * 3) % 17) as f64 / 17.0);
        let f = image(9, 7, seed);
        let f3 = Tensor::concat_channels(&Tensor::concat_channels(&f, &f).unwrap(), &f).unwrap();
        let mut s = 0.0;
        for c in 0..3 {
            for h in 0..9 {
                for w in 0..7 {
                    s += (x.at(0, c, h, w) - f3.at(0, c, h, w)).powi(2);
                }
            }
        }
        assert!((metrics::mse(&x, &f3).unwrap() - s / 189.0).abs() < 1e-12);
    }
}

#[test]
fn luminance_stays_in_unit_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Tensor::from_fn(Shape::new(2, 3, 8, 8), |_, _, _, _| rng.random_range(0.0..=1.0));
    let l = metrics::luminance(&img).unwrap();
    assert!(l.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn graph_expressions_match_plain_evaluators() {
    for stride in [1, 4] {
        let cfg = WindowConfig::default().with_stride(stride);
        for seed in 0..5 {
            let (a, b, f) = triple(seed, 32, 32);
            let mut g = Graph::<f64>::new();
            let (av, bv, fv) = (g.input(a.clone()), g.input(b.clone()), g.input(f.clone()));
            let qw = expr::qw(&mut g, av, bv, fv, &cfg).unwrap();
            let qe = expr::qe(&mut g, av, bv, fv, &cfg).unwrap();
            let mse = expr::mse(&mut g, av, fv).unwrap();
            let qw_plain = metrics::qw(&a, &b, &f, &cfg).unwrap();
            let qe_plain = metrics::qe(&a, &b, &f, &cfg, &EdgeConfig::default()).unwrap();
            assert!((g.value(qw).item().unwrap() - qw_plain).abs() < 1e-9);
            assert!((g.value(qe).item().unwrap() - qe_plain).abs() < 1e-9);
            assert!((g.value(mse).item().unwrap() - metrics::mse(&a, &f).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn batched_expression_averages_images() {
    let cfg = WindowConfig::default().with_stride(2);
    let (a0, b0, f0) = triple(1, 16, 16);
    let (a1, b1, f1) = triple(2, 16, 16);
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::stack(&[&a0, &a1]).unwrap());
    let b = g.input(Tensor::stack(&[&b0, &b1]).unwrap());
    let f = g.input(Tensor::stack(&[&f0, &f1]).unwrap());
    let q = expr::qw(&mut g, a, b, f, &cfg).unwrap();
    let expect = 0.5 * (metrics::qw(&a0, &b0, &f0, &cfg).unwrap() + metrics::qw(&a1, &b1, &f1, &cfg).unwrap());
    assert!((g.value(q).item().unwrap() - expect).abs() < 1e-12);
}

#[test]
fn luminance_expression_matches_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = Tensor::from_fn(Shape::new(2, 3, 5, 6), |_, _, _, _| rng.random_range(0.0..=1.0));
    let mut g = Graph::<f64>::new();
    let v = g.input(img.clone());
    let l = expr::luminance(&mut g, v).unwrap();
    let plain = metrics::luminance(&img).unwrap();
    for (x, y) in g.value(l).data().iter().zip(plain.data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

fn fd_check(name: &str, seed: u64, build: impl Fn(&mut Graph<f64>, irfusion_core::Var, irfusion_core::Var, irfusion_core::Var) -> irfusion_core::Result<irfusion_core::Var> + Sync) {
    let (a, b, f) = triple(seed, 16, 16);
    let report = GradCheck::default()
        .with_seed(seed)
        .run(&[f], |g, v| {
            let av = g.input(a.clone());
            let bv = g.input(b.clone());
            build(g, av, bv, v[0])
        })
        .unwrap();
    assert!(
        report.max_rel_error < 1e-4,
        "{name} seed {seed}: {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn gradcheck_qw_expression() {
    let cfg = WindowConfig::default().with_stride(2);
    for seed in 0..5 {
        fd_check("qw", seed, |g, a, b, f| expr::qw(g, a, b, f, &cfg));
    }
}

#[test]
fn gradcheck_qe_expression() {
    let cfg = WindowConfig::default().with_stride(2);
    for seed in 0..5 {
        fd_check("qe", seed, |g, a, b, f| expr::qe(g, a, b, f, &cfg));
    }
}

#[test]
fn gradcheck_q0_map_and_mse_expressions() {
    // Single-window Qw reduces to Q0 with λ weighting; one 8×8 window per image.
    let cfg = WindowConfig::default().with_stride(8);
    for seed in 0..5 {
        fd_check("q0", seed, |g, a, b, f| expr::qw(g, a, b, f, &cfg));
        fd_check("mse", seed, |g, a, _, f| expr::mse(g, a, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn q0_stays_in_range(
        x in proptest::collection::vec(-1.0f64..2.0, 16),
        y in proptest::collection::vec(-1.0f64..2.0, 16),
        scale in 1e-6f64..10.0,
    ) {
        let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let q = metrics::q0(&x, &ys, 1e-8).unwrap();
        prop_assert!(q.is_finite());
        prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&q), "q0 = {}", q);
    }

    #[test]
    fn patch_stats_obey_cauchy_schwarz(
        x in proptest::collection::vec(0.0f64..1.0, 64),
        y in proptest::collection::vec(0.0f64..1.0, 64),
    ) {
        let s = metrics::PatchStats::from_patches(&x, &y).unwrap();
        prop_assert!(s.var_x >= 0.0 && s.var_y >= 0.0);
        prop_assert!(s.cov_xy.abs() <= (s.var_x * s.var_y).sqrt() + 1e-9);
    }
}
