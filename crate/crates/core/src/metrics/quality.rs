use super::{same_size, EdgeConfig, Plane, WindowConfig};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

/// Means, variances and covariance of two co-located windows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

impl PatchStats {
    /// Two-pass statistics over paired samples.
    pub fn from_patches(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::shape(format!(
                "patches must be non-empty and equally sized, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        let n = x.len() as f64;
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov_xy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (dx, dy) = (a - mean_x, b - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov_xy += dx * dy;
        }
        Ok(PatchStats {
            mean_x,
            mean_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov_xy: cov_xy / n,
        })
    }

    /// Statistics from raw sums over `n` samples. Variances are clamped at
    /// zero against cancellation.
    fn from_sums(n: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64) -> Self {
        let (mean_x, mean_y) = (sx / n, sy / n);
        PatchStats {
            mean_x,
            mean_y,
            var_x: (sxx / n - mean_x * mean_x).max(0.0),
            var_y: (syy / n - mean_y * mean_y).max(0.0),
            cov_xy: sxy / n - mean_x * mean_y,
        }
    }

    /// Correlation × luminance distortion × contrast distortion.
    pub fn q0(&self, epsilon: f64) -> f64 {
        let sx = self.var_x.sqrt();
        let sy = self.var_y.sqrt();
        let correlation = self.cov_xy / (sx * sy).max(epsilon);
        let luminance = 2.0 * self.mean_x * self.mean_y
            / (self.mean_x * self.mean_x + self.mean_y * self.mean_y).max(epsilon);
        let contrast = 2.0 * sx * sy / (self.var_x + self.var_y).max(epsilon);
        correlation * luminance * contrast
    }
}

/// Universal quality index between two equally sized patches.
pub fn q0(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64> {
    Ok(PatchStats::from_patches(x, y)?.q0(epsilon))
}

/// Saliency weight of the first source: `(σa + ε/2) / (σa + σb + ε)`.
/// Swapping the sources yields exactly `1 − λ`.
pub(crate) fn source_weight(sigma_a: f64, sigma_b: f64, epsilon: f64) -> f64 {
    (sigma_a + 0.5 * epsilon) / (sigma_a + sigma_b + epsilon)
}

/// Inclusive-prefix sums with a zero first row and column.
struct SummedArea {
    sums: Vec<f64>,
    stride: usize,
}

impl SummedArea {
    fn new(h: usize, w: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += value(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        SummedArea { sums, stride }
    }

    fn window(&self, y: usize, x: usize, size: usize) -> f64 {
        let s = self.stride;
        let (y1, x1) = (y + size, x + size);
        self.sums[y1 * s + x1] - self.sums[y * s + x1] - self.sums[y1 * s + x]
            + self.sums[y * s + x]
    }
}

/// Weighted fusion quality index: the mean over all windows of
/// `λ·Q0(a, f) + (1 − λ)·Q0(b, f)` with `λ = σa / (σa + σb)`.
pub fn qw(a: &Tensor, b: &Tensor, f: &Tensor, cfg: &WindowConfig) -> Result<f64> {
    cfg.validate()?;
    let planes = [
        Plane::of(a, "source a")?,
        Plane::of(b, "source b")?,
        Plane::of(f, "fused image")?,
    ];
    same_size(&planes)?;
    let [pa, pb, pf] = planes;
    let (h, w) = (pa.height, pa.width);
    let (rows, cols) = (cfg.positions(h), cfg.positions(w));
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "{h}×{w} image is smaller than the {0}×{0} window",
            cfg.window_size
        )));
    }

    let (da, db, df) = (pa.data, pb.data, pf.data);
    let tables = [
        SummedArea::new(h, w, |i| da[i]),
        SummedArea::new(h, w, |i| db[i]),
        SummedArea::new(h, w, |i| df[i]),
        SummedArea::new(h, w, |i| da[i] * da[i]),
        SummedArea::new(h, w, |i| db[i] * db[i]),
        SummedArea::new(h, w, |i| df[i] * df[i]),
        SummedArea::new(h, w, |i| da[i] * df[i]),
        SummedArea::new(h, w, |i| db[i] * df[i]),
    ];
    let k = cfg.window_size;
    let n = (k * k) as f64;
    let eps = cfg.epsilon;

    let row_sums = map_indexed(rows, |r| {
        let y = r * cfg.stride;
        (0..cols)
            .map(|c| {
                let x = c * cfg.stride;
                let s: [f64; 8] = std::array::from_fn(|t| tables[t].window(y, x, k));
                let af = PatchStats::from_sums(n, s[0], s[2], s[3], s[5], s[6]);
                let bf = PatchStats::from_sums(n, s[1], s[2], s[4], s[5], s[7]);
                let lambda = source_weight(af.var_x.sqrt(), bf.var_x.sqrt(), eps);
                lambda * af.q0(eps) + (1.0 - lambda) * bf.q0(eps)
            })
            .sum::<f64>()
    });
    Ok(row_sums.iter().sum::<f64>() / (rows * cols) as f64)
}

/// Qw evaluated on the edge maps of all three images.
pub fn qe(
    a: &Tensor,
    b: &Tensor,
    f: &Tensor,
    cfg: &WindowConfig,
    edges: &EdgeConfig,
) -> Result<f64> {
    qw(
        &edges.edge_map(a)?,
        &edges.edge_map(b)?,
        &edges.edge_map(f)?,
        cfg,
    )
}

/// Mean of per-channel Qw. `a` and `f` must have the same channel count; a
/// single-channel `b` is paired with every channel.
pub fn qw_per_channel(a: &Tensor, b: &Tensor, f: &Tensor, cfg: &WindowConfig) -> Result<f64> {
    let c = a.shape().c();
    if f.shape().c() != c || (b.shape().c() != 1 && b.shape().c() != c) {
        return Err(Error::shape(format!(
            "per-channel Qw needs matching channels, got {}, {}, {}",
            a.shape(),
            b.shape(),
            f.shape()
        )));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let bc = if b.shape().c() == 1 { 0 } else { ch };
        total += qw(
            &a.slice_channels(ch, 1)?,
            &b.slice_channels(bc, 1)?,
            &f.slice_channels(ch, 1)?,
            cfg,
        )?;
    }
    Ok(total / c as f64)
}

/// Mean squared difference over every element.
pub fn mse(x: &Tensor, f: &Tensor) -> Result<f64> {
    if x.shape() != f.shape() {
        return Err(Error::shape(format!(
            "mse between {} and {}",
            x.shape(),
            f.shape()
        )));
    }
    let s: f64 = x
        .data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / x.len() as f64)
}
