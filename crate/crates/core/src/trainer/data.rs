use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Aligned visible (`1×3×H×W`) and infrared (`1×1×H×W`) images in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub vis: Tensor,
    pub ir: Tensor,
}

impl Pair {
    pub fn new(vis: Tensor, ir: Tensor) -> Result<Self> {
        let (v, r) = (vis.shape(), ir.shape());
        if v.n() != 1 || r.n() != 1 || v.c() != 3 || r.c() != 1 || (v.h(), v.w()) != (r.h(), r.w()) {
            return Err(Error::shape(format!(
                "a pair is a 1×3×H×W visible and a 1×1×H×W infrared image, got {v} and {r}"
            )));
        }
        Ok(Pair { vis, ir })
    }
}

/// `[0, 1] → [−1, 1]`, clamping first.
pub fn normalize<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let two = T::lit(2.0);
    img.map(|x| x.max(T::zero()).min(T::one()) * two - T::one())
}

/// `[−1, 1] → [0, 1]`, clamping first.
pub fn denormalize<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(0.5);
    img.map(|x| (x.max(-T::one()).min(T::one()) + T::one()) * half)
}

#[derive(Clone, Copy)]
enum Texture {
    Stripes { freq: f64, angle: f64 },
    Checker { cell: f64 },
    Rings { freq: f64 },
}

#[derive(Clone, Copy)]
struct Object {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    ellipse: bool,
    color: [f64; 3],
    texture: Texture,
    amplitude: f64,
    heat: f64,
}

impl Object {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        if self.ellipse {
            dy * dy + dx * dx <= 1.0
        } else {
            dy.abs() <= 1.0 && dx.abs() <= 1.0
        }
    }

    fn pattern(&self, y: f64, x: f64) -> f64 {
        match self.texture {
            Texture::Stripes { freq, angle } => (freq * (x * angle.cos() + y * angle.sin())).sin(),
            Texture::Checker { cell } => {
                if ((y / cell).floor() + (x / cell).floor()) as i64 % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Texture::Rings { freq } => (freq * ((y - self.cy).hypot(x - self.cx))).sin(),
        }
    }
}

fn random_object(rng: &mut ChaCha8Rng, s: f64, cy: f64, cx: f64, min_radius: f64) -> Object {
    let texture = match rng.random_range(0..3) {
        0 => Texture::Stripes {
            freq: rng.random_range(0.6..1.6),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        },
        1 => Texture::Checker {
            cell: rng.random_range(2.0..5.0),
        },
        _ => Texture::Rings {
            freq: rng.random_range(0.8..1.8),
        },
    };
    Object {
        cy,
        cx,
        ry: rng.random_range(min_radius..s / 5.0),
        rx: rng.random_range(min_radius..s / 5.0),
        ellipse: rng.random_bool(0.5),
        color: [
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
        ],
        texture,
        amplitude: rng.random_range(0.15..0.3),
        heat: rng.random_range(0.3..0.7),
    }
}

/// Procedural aligned pairs.
///
/// The scene is a grainy background gradient with textured objects. The
/// visible image shows colour, grain and texture; the infrared image shows
/// each object as a flat temperature. One half of the frame holds a large
/// textured object; the other holds an opaque smoke cloud in the visible image
/// that hides a hot target only the infrared image sees.
pub fn synth_pairs(n: usize, size: usize, seed: u64) -> Result<Vec<Pair>> {
    if n == 0 {
        return Err(Error::config("need at least one synthetic pair"));
    }
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::config(format!("synthetic size must be a positive multiple of 32, got {size}")));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synth_one(&mut rng, size)
        })
        .collect()
}

fn synth_one(rng: &mut ChaCha8Rng, size: usize) -> Result<Pair> {
    let s = size as f64;
    let left_textured = rng.random_bool(0.5);
    let half = |textured: bool| {
        if textured == left_textured {
            s * 0.25
        } else {
            s * 0.75
        }
    };

    let mut objects = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        objects.push(random_object(rng, s, cy, cx, s / 16.0));
    }
    // Large textured object drawn on top, as warm as the ground: visible only.
    let cy = rng.random_range(0.3 * s..0.7 * s);
    let mut anchor = random_object(rng, s, cy, half(true), s / 7.0);
    anchor.amplitude = rng.random_range(0.25..0.35);

    let smoke = (
        rng.random_range(0.35 * s..0.65 * s),
        half(false),
        rng.random_range(s / 6.0..s / 4.5),
    );
    let target = (
        smoke.0 + rng.random_range(-0.2..0.2) * smoke.2,
        smoke.1 + rng.random_range(-0.2..0.2) * smoke.2,
        rng.random_range(0.3..0.45) * smoke.2,
    );
    let haze = rng.random_range(0.6..0.8);

    let sky = [
        [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)],
        [rng.random_range(0.2..0.6), rng.random_range(0.2..0.6), rng.random_range(0.2..0.6)],
    ];
    let ground_heat = rng.random_range(0.15..0.3);
    // Ground grain: a few random plane waves, visible only.
    let grain_amplitude = rng.random_range(0.05..0.1);
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.3..1.2),
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let tilt = rng.random_range(-0.1..0.1);
    anchor.heat = ground_heat;
    objects.push(anchor);

    let mut vis = Tensor::zeros(Shape::new(1, 3, size, size));
    let mut ir = Tensor::zeros(Shape::new(1, 1, size, size));
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = fy / s;
            let mut rgb = [0.0; 3];
            for (c, v) in rgb.iter_mut().enumerate() {
                *v = sky[0][c] * (1.0 - t) + sky[1][c] * t;
            }
            let grain: f64 = waves
                .iter()
                .map(|(f, a, p)| (f * (fx * a.cos() + fy * a.sin()) + p).sin())
                .sum::<f64>()
                / waves.len() as f64;
            for v in rgb.iter_mut() {
                *v += grain_amplitude * grain;
            }
            let mut heat = ground_heat + tilt * (fx / s - 0.5);
            for o in objects.iter() {
                if o.contains(fy, fx) {
                    let p = o.amplitude * o.pattern(fy, fx);
                    for (c, v) in rgb.iter_mut().enumerate() {
                        *v = o.color[c] + p;
                    }
                    heat = o.heat;
                }
            }

            let d = (fy - target.0).hypot(fx - target.1);
            if d <= target.2 {
                heat = 0.95;
            }

            let r = (fy - smoke.0).hypot(fx - smoke.1) / smoke.2;
            let alpha = if r <= 0.8 {
                1.0
            } else if r < 1.0 {
                (1.0 - r) / 0.2
            } else {
                0.0
            };
            for (c, v) in rgb.iter().enumerate() {
                vis.set(0, c, y, x, (v * (1.0 - alpha) + haze * alpha).clamp(0.0, 1.0));
            }
            ir.set(0, 0, y, x, heat.clamp(0.0, 1.0));
        }
    }
    Pair::new(vis, ir)
}
