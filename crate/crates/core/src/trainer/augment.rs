use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub blur_probability: f64,
    pub noise_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            blur_sigma: (0.0, 1.5),
            noise_sigma: (0.0, 0.05),
            blur_probability: 0.5,
            noise_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No blur and no noise.
    pub fn identity() -> Self {
        AugmentConfig {
            blur_sigma: (0.0, 0.0),
            noise_sigma: (0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("blur sigma", self.blur_sigma), ("noise sigma", self.noise_sigma)] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        for p in [self.blur_probability, self.noise_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("probability {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, p: f64, (lo, hi): (f64, f64)) -> f64 {
    let apply = rng.random_bool(p);
    let sigma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if apply {
        sigma
    } else {
        0.0
    }
}

/// Blurs and adds noise to both images of a pair with one sampled sigma each.
pub fn augment(vis: &Tensor, ir: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let blur = draw(rng, cfg.blur_probability, cfg.blur_sigma);
    let noise = draw(rng, cfg.noise_probability, cfg.noise_sigma);
    let apply = |img: &Tensor, rng: &mut dyn rand::RngCore| {
        let mut out = gaussian_blur(img, blur);
        if noise > 0.0 {
            let n = Normal::new(0.0, noise).expect("finite sigma");
            for x in out.data_mut() {
                *x += n.sample(rng);
            }
        }
        out.map(|x| x.clamp(0.0, 1.0))
    };
    let v = apply(vis, rng);
    let r = apply(ir, rng);
    (v, r)
}

/// Separable Gaussian blur with replicated borders; radius `ceil(3σ)`.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);

    let s = img.shape();
    let (h, w) = (s.h() as isize, s.w() as isize);
    let pass = |src: &Tensor, horizontal: bool| {
        Tensor::from_fn(s, |n, c, y, x| {
            k.iter()
                .enumerate()
                .map(|(t, kv)| {
                    let d = t as isize - r;
                    let (yy, xx) = if horizontal {
                        (y as isize, (x as isize + d).clamp(0, w - 1))
                    } else {
                        ((y as isize + d).clamp(0, h - 1), x as isize)
                    };
                    kv * src.at(n, c, yy as usize, xx as usize)
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}
