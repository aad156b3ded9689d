use irfusion_core::loss::{fusion_loss, loss_terms, LossConfig};
use irfusion_core::metrics::WindowConfig;
use irfusion_core::tensor::gradcheck::GradCheck;
use irfusion_core::{Graph, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 16;

fn cfg() -> LossConfig {
    LossConfig {
        window: WindowConfig::default().with_stride(2),
        ..LossConfig::default()
    }
}

/// Smooth structured image in [0, 1] with `c` channels.
fn structured(c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..6.0)).collect();
    let freq: f64 = rng.random_range(0.2..0.6);
    Tensor::from_fn(Shape::new(1, c, SIZE, SIZE), |_, ch, y, x| {
        0.5 + 0.4 * ((x as f64 * freq + phase[ch]).sin() * (y as f64 * 0.3).cos())
    })
}

fn noise(c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(1, c, SIZE, SIZE), |_, _, _, _| rng.random_range(0.0..1.0))
}

fn gray3(y: &Tensor) -> Tensor {
    let two = Tensor::concat_channels(y, y).unwrap();
    Tensor::concat_channels(&two, y).unwrap()
}

fn eval(vis: &Tensor, ir: &Tensor, f: &Tensor, cfg: &LossConfig) -> f64 {
    let mut g = Graph::<f64>::new();
    let (v, i, f) = (g.input(vis.clone()), g.input(ir.clone()), g.input(f.clone()));
    let l = fusion_loss(&mut g, v, i, f, cfg).unwrap();
    g.value(l).item().unwrap()
}

#[test]
fn perfect_fusion_has_zero_loss() {
    let y = structured(1, 1);
    let rgb = gray3(&y);
    let l = eval(&rgb, &y, &rgb, &LossConfig::default());
    assert!(l.abs() < 1e-6, "{l}");
}

#[test]
fn noise_fusion_without_mse_exceeds_one() {
    let mut c = cfg();
    c.gamma = 0.0;
    let l = eval(&structured(3, 2), &structured(1, 3), &noise(3, 4), &c);
    assert!(l > 1.0, "{l}");
}

#[test]
fn graph_loss_equals_hand_composed_terms() {
    for seed in 0..5 {
        let (v, i, f) = (structured(3, seed), structured(1, seed + 10), noise(3, seed + 20));
        let c = LossConfig { alpha: 0.7, beta: 1.3, gamma: 2.0, ..cfg() };
        let terms = loss_terms(&v, &i, &f, &c).unwrap();
        let hand = 0.7 * (1.0 - terms.qw) + 1.3 * (1.0 - terms.qe) + 2.0 * 0.5 * (terms.mse_vis + terms.mse_ir);
        assert!((eval(&v, &i, &f, &c) - hand).abs() < 1e-9);
        assert!((terms.total(&c) - hand).abs() < 1e-15);
    }
}

#[test]
fn batched_loss_is_mean_of_items() {
    let c = cfg();
    let (v0, i0, f0) = (structured(3, 1), structured(1, 2), noise(3, 3));
    let (v1, i1, f1) = (structured(3, 4), structured(1, 5), noise(3, 6));
    let v = Tensor::stack(&[&v0, &v1]).unwrap();
    let i = Tensor::stack(&[&i0, &i1]).unwrap();
    let f = Tensor::stack(&[&f0, &f1]).unwrap();
    let expect = 0.5 * (eval(&v0, &i0, &f0, &c) + eval(&v1, &i1, &f1, &c));
    assert!((eval(&v, &i, &f, &c) - expect).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (v, i) = (structured(3, seed), structured(1, seed + 50));
        let f = noise(3, seed + 100).map(|x| 0.25 + 0.5 * x);
        let c = cfg();
        let report = GradCheck::default()
            .with_seed(seed)
            .with_probes(200)
            .run(&[f], |g, xs| {
                let vv = g.input(v.clone());
                let iv = g.input(i.clone());
                fusion_loss(g, vv, iv, xs[0], &c)
            })
            .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {:?}", report.worst);
    }
}

#[test]
fn any_perturbation_of_the_optimum_increases_loss() {
    let y = structured(1, 7);
    let rgb = gray3(&y);
    let c = cfg();
    let base = eval(&rgb, &y, &rgb, &c);
    for seed in 0..10 {
        let dir = noise(3, 200 + seed).map(|v| v - 0.5);
        let mut f = rgb.clone();
        for (x, d) in f.data_mut().iter_mut().zip(dir.data()) {
            *x += 0.01 * d;
        }
        let l = eval(&rgb, &y, &f, &c);
        assert!(l > base, "direction {seed}: {l} <= {base}");
    }
}

#[test]
fn loss_is_monotone_in_gamma() {
    let (v, i, f) = (structured(3, 1), structured(1, 2), noise(3, 3));
    let mut prev = f64::NEG_INFINITY;
    for gamma in [0.0, 0.5, 1.0, 2.0, 8.0] {
        let l = eval(&v, &i, &f, &LossConfig { gamma, ..cfg() });
        assert!(l > prev);
        prev = l;
    }
}

#[test]
fn invalid_configs_and_shapes_are_rejected() {
    let zero = LossConfig { alpha: 0.0, beta: 0.0, gamma: 0.0, ..cfg() };
    assert!(zero.validate().is_err());
    assert!(LossConfig { beta: -1.0, ..cfg() }.validate().is_err());
    assert!(LossConfig { gamma: f64::NAN, ..cfg() }.validate().is_err());

    let (v, i) = (structured(3, 1), structured(1, 2));
    let mut g = Graph::<f64>::new();
    let (vv, iv) = (g.input(v.clone()), g.input(i.clone()));
    let wrong = g.input(structured(1, 3));
    assert!(fusion_loss(&mut g, vv, iv, wrong, &cfg()).is_err());
    assert!(loss_terms(&v, &v, &v, &cfg()).is_err());
}
