//! Composite fusion objective: `α(1 − Qw) + β(1 − Qe) + γ·½(MSE_vis + MSE_ir)`.
//!
//! Inputs are in metric range `[0, 1]`: the visible image has 3 channels, the
//! infrared image 1, and the fused image 3. Qw and Qe compare luminances; the
//! visible MSE runs over RGB and the infrared MSE against fused luminance.

use crate::error::{Error, Result};
use crate::metrics::{self, expr, EdgeConfig, WindowConfig};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub window: WindowConfig,
    pub edge: EdgeConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: WindowConfig::default(),
            edge: EdgeConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::config("at least one of alpha, beta, gamma must be positive"));
        }
        self.window.validate()
    }
}

/// Individual terms of the objective, evaluated without a graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub qw: f64,
    pub qe: f64,
    pub mse_vis: f64,
    pub mse_ir: f64,
}

impl LossTerms {
    pub fn total(&self, cfg: &LossConfig) -> f64 {
        cfg.alpha * (1.0 - self.qw)
            + cfg.beta * (1.0 - self.qe)
            + cfg.gamma * 0.5 * (self.mse_vis + self.mse_ir)
    }
}


fn check_shapes(vis: crate::Shape, ir: crate::Shape, fused: crate::Shape) -> Result<()> {
    let aligned = vis.n() == ir.n()
        && vis.n() == fused.n()
        && (vis.h(), vis.w()) == (ir.h(), ir.w())
        && (vis.h(), vis.w()) == (fused.h(), fused.w());
    if !aligned || vis.c() != 3 || ir.c() != 1 || fused.c() != 3 {
        return Err(Error::shape(format!(
            "loss expects visible N×3×H×W, infrared N×1×H×W and fused N×3×H×W, got {vis}, {ir}, {fused}"
        )));
    }
    Ok(())
}

/// The objective as a scalar graph node, averaged over the batch.
pub fn fusion_loss<T: Scalar>(
    g: &mut Graph<T>,
    vis: Var,
    ir: Var,
    fused: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_shapes(g.shape(vis), g.shape(ir), g.shape(fused))?;
    let vis_y = expr::luminance(g, vis)?;
    let fused_y = expr::luminance(g, fused)?;

    let mut total = None;
    let mut push = |g: &mut Graph<T>, term: Var| -> Result<()> {
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
        Ok(())
    };
    if cfg.alpha > 0.0 {
        let q = expr::qw(g, vis_y, ir, fused_y, &cfg.window)?;
        let term = g.affine(q, -cfg.alpha, cfg.alpha);
        push(g, term)?;
    }
    if cfg.beta > 0.0 {
        let q = expr::qe(g, vis_y, ir, fused_y, &cfg.window)?;
        let term = g.affine(q, -cfg.beta, cfg.beta);
        push(g, term)?;
    }
    if cfg.gamma > 0.0 {
        let mv = expr::mse(g, vis, fused)?;
        let mi = expr::mse(g, ir, fused_y)?;
        let sum = g.add(mv, mi)?;
        let term = g.mul_scalar(sum, 0.5 * cfg.gamma);
        push(g, term)?;
    }
    Ok(total.expect("validated config has a positive weight"))
}

/// Plain evaluation of every term, averaged over the batch.
pub fn loss_terms(vis: &Tensor, ir: &Tensor, fused: &Tensor, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    check_shapes(vis.shape(), ir.shape(), fused.shape())?;
    let n = vis.shape().n();
    let mut acc = LossTerms { qw: 0.0, qe: 0.0, mse_vis: 0.0, mse_ir: 0.0 };
    for i in 0..n {
        let (v, r, f) = (vis.batch_item(i), ir.batch_item(i), fused.batch_item(i));
        let vy = metrics::luminance(&v)?;
        let fy = metrics::luminance(&f)?;
        acc.qw += metrics::qw(&vy, &r, &fy, &cfg.window)?;
        acc.qe += metrics::qe(&vy, &r, &fy, &cfg.window, &cfg.edge)?;
        acc.mse_vis += metrics::mse(&v, &f)?;
        acc.mse_ir += metrics::mse(&r, &fy)?;
    }
    let k = n as f64;
    Ok(LossTerms {
        qw: acc.qw / k,
        qe: acc.qe / k,
        mse_vis: acc.mse_vis / k,
        mse_ir: acc.mse_ir / k,
    })
}
