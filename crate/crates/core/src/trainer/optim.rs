use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base_lr: 1e-3,
            milestones: vec![10, 20, 30],
            factor: 0.5,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::config(format!("decay factor must be positive, got {}", self.factor)));
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch: one decay per milestone already reached.
pub fn lr_at(epoch: usize, s: &Schedule) -> f64 {
    let passed = s.milestones.iter().filter(|&&m| m <= epoch).count();
    s.base_lr * s.factor.powi(passed as i32)
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimState {
    pub fn new(shapes: impl IntoIterator<Item = Shape>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        OptimState {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }
}

/// One update of every parameter in place. Rejects non-finite gradients
/// before touching anything.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut OptimState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam got {} parameters, {} gradients and state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(format!(
                "parameter {i} is {} but its gradient is {}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(e) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {} at element {e} of parameter {i}",
                g.data()[e]
            )));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
