//! Graph-recorded versions of the indices, for use inside a training loss.
//!
//! Window statistics come from average pooling, so a stride-`s` window grid
//! here visits exactly the windows the plain evaluators visit.

use super::edge::{EDGE_PEAK_FLOOR, SOBEL_X, SOBEL_Y};
use super::{WindowConfig, LUMA_WEIGHTS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

struct Moments {
    mean: Var,
    var: Var,
}

fn moments<T: Scalar>(g: &mut Graph<T>, x: Var, cfg: &WindowConfig) -> Result<Moments> {
    let (k, s) = (cfg.window_size, cfg.stride);
    let mean = g.avgpool2d(x, k, s)?;
    let sq = g.mul(x, x)?;
    let mean_sq = g.avgpool2d(sq, k, s)?;
    let m2 = g.mul(mean, mean)?;
    let raw = g.sub(mean_sq, m2)?;
    Ok(Moments {
        mean,
        var: g.relu(raw),
    })
}

fn covariance<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    mx: &Moments,
    my: &Moments,
    cfg: &WindowConfig,
) -> Result<Var> {
    let xy = g.mul(x, y)?;
    let exy = g.avgpool2d(xy, cfg.window_size, cfg.stride)?;
    let mm = g.mul(mx.mean, my.mean)?;
    g.sub(exy, mm)
}

/// Per-window Q0 map with floored denominators.
fn q0_map<T: Scalar>(
    g: &mut Graph<T>,
    mx: &Moments,
    my: &Moments,
    cov: Var,
    eps: f64,
) -> Result<Var> {
    let sx = g.sqrt(mx.var)?;
    let sy = g.sqrt(my.var)?;
    let sxsy = g.mul(sx, sy)?;

    let den = g.clamp_min(sxsy, eps);
    let correlation = g.div(cov, den)?;

    let mxy = g.mul(mx.mean, my.mean)?;
    let num = g.mul_scalar(mxy, 2.0);
    let mx2 = g.mul(mx.mean, mx.mean)?;
    let my2 = g.mul(my.mean, my.mean)?;
    let den = g.add(mx2, my2)?;
    let den = g.clamp_min(den, eps);
    let luminance = g.div(num, den)?;

    let num = g.mul_scalar(sxsy, 2.0);
    let den = g.add(mx.var, my.var)?;
    let den = g.clamp_min(den, eps);
    let contrast = g.div(num, den)?;

    let cl = g.mul(correlation, luminance)?;
    g.mul(cl, contrast)
}

fn check_triple<T: Scalar>(g: &Graph<T>, a: Var, b: Var, f: Var, cfg: &WindowConfig) -> Result<()> {
    cfg.validate()?;
    let (sa, sb, sf) = (g.shape(a), g.shape(b), g.shape(f));
    if sa != sb || sa != sf || sa.c() != 1 {
        return Err(Error::shape(format!(
            "Qw needs three aligned single-channel batches, got {sa}, {sb}, {sf}"
        )));
    }
    if cfg.positions(sa.h()) == 0 || cfg.positions(sa.w()) == 0 {
        return Err(Error::shape(format!(
            "{sa} is smaller than the {0}×{0} window",
            cfg.window_size
        )));
    }
    Ok(())
}

/// Qw averaged over the batch, as a scalar node.
pub fn qw<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, f: Var, cfg: &WindowConfig) -> Result<Var> {
    check_triple(g, a, b, f, cfg)?;
    let eps = cfg.epsilon;
    let ma = moments(g, a, cfg)?;
    let mb = moments(g, b, cfg)?;
    let mf = moments(g, f, cfg)?;
    let caf = covariance(g, a, f, &ma, &mf, cfg)?;
    let cbf = covariance(g, b, f, &mb, &mf, cfg)?;
    let q_af = q0_map(g, &ma, &mf, caf, eps)?;
    let q_bf = q0_map(g, &mb, &mf, cbf, eps)?;

    let sa = g.sqrt(ma.var)?;
    let sb = g.sqrt(mb.var)?;
    let num = g.add_scalar(sa, 0.5 * eps);
    let sum = g.add(sa, sb)?;
    let den = g.add_scalar(sum, eps);
    let lambda = g.div(num, den)?;

    // λ·q_af + (1 − λ)·q_bf
    let diff = g.sub(q_af, q_bf)?;
    let weighted = g.mul(lambda, diff)?;
    let per_window = g.add(q_bf, weighted)?;
    Ok(g.mean(per_window))
}

/// Sobel magnitude with replicated borders, max-normalized per plane.
pub fn sobel_edge_map<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x);
    if s.c() != 1 || s.h() < 3 || s.w() < 3 {
        return Err(Error::shape(format!(
            "edge map needs single-channel images of at least 3×3, got {s}"
        )));
    }
    let kernels = Tensor::from_fn(Shape::new(2, 1, 3, 3), |o, _, i, j| {
        T::lit(if o == 0 { SOBEL_X[i][j] } else { SOBEL_Y[i][j] })
    });
    let k = g.input(kernels);
    let padded = g.pad_replicate(x, 1)?;
    let grads = g.conv2d(padded, k, None, 1, 0)?;
    let sq = g.mul(grads, grads)?;
    let gx2 = g.slice_channels(sq, 0, 1)?;
    let gy2 = g.slice_channels(sq, 1, 1)?;
    let mag2 = g.add(gx2, gy2)?;
    let mag = g.sqrt(mag2)?;
    Ok(g.max_normalize(mag, EDGE_PEAK_FLOOR))
}

/// Qw on edge maps of all three inputs.
pub fn qe<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, f: Var, cfg: &WindowConfig) -> Result<Var> {
    check_triple(g, a, b, f, cfg)?;
    let ea = sobel_edge_map(g, a)?;
    let eb = sobel_edge_map(g, b)?;
    let ef = sobel_edge_map(g, f)?;
    qw(g, ea, eb, ef, cfg)
}

/// Weighted channel sum as a fixed 1×1 convolution.
pub fn luminance<T: Scalar>(g: &mut Graph<T>, rgb: Var) -> Result<Var> {
    let s = g.shape(rgb);
    if s.c() != 3 {
        return Err(Error::shape(format!("luminance needs 3 channels, got {s}")));
    }
    let w = Tensor::new(
        Shape::new(1, 3, 1, 1),
        LUMA_WEIGHTS.iter().map(|&v| T::lit(v)).collect(),
    )?;
    let w = g.input(w);
    g.conv2d(rgb, w, None, 1, 0)
}

pub fn mse<T: Scalar>(g: &mut Graph<T>, x: Var, f: Var) -> Result<Var> {
    let d = g.sub(x, f)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}
