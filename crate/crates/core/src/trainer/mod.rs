//! Adam training of a [`FusionNet`] on the fusion loss.
//!
//! Every epoch draws its shuffling and augmentation from its own RNG stream,
//! so a run resumed from a checkpoint follows the uninterrupted trajectory
//! bit for bit.

mod augment;
mod data;
mod optim;

pub use augment::{augment, gaussian_blur, AugmentConfig};
pub use data::{denormalize, normalize, synth_pairs, Pair};
pub use optim::{adam_step, lr_at, OptimState, Schedule};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::loss::{fusion_loss, loss_terms, LossConfig};
use crate::metrics::{self, WindowConfig};
use crate::model::FusionNet;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub augment: AugmentConfig,
    /// Training loss; its window stride is the training stride.
    pub loss: LossConfig,
    pub heldout_fraction: f64,
    /// Window stride for held-out scoring.
    pub eval_stride: usize,
    /// Compare the output with the un-augmented pair rather than the
    /// augmented network inputs.
    pub clean_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1,
            seed: 0,
            schedule: Schedule::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig {
                window: WindowConfig::default().with_stride(4),
                ..LossConfig::default()
            },
            heldout_fraction: 0.125,
            eval_stride: 1,
            clean_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::config(format!(
                "held-out fraction must be in [0, 1), got {}",
                self.heldout_fraction
            )));
        }
        self.schedule.validate()?;
        self.augment.validate()?;
        self.loss.validate()?;
        self.eval_window().validate()
    }

    pub fn eval_window(&self) -> WindowConfig {
        self.loss.window.with_stride(self.eval_stride)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub heldout_loss: f64,
    pub heldout_qw: f64,
    pub heldout_qe: f64,
}

/// Seeded partition of `n` pair indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

/// Holds out `round(n·fraction)` pairs, keeping at least one for training.
pub fn split(n: usize, fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let k = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut heldout = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    Split { train, heldout }
}

/// Held-out scores of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub qw: f64,
    pub qe: f64,
}

/// Fuses `pair` with `net`: normalizes, runs forward, maps back to `[0, 1]`.
pub fn fuse_pair(net: &FusionNet, pair: &Pair) -> Result<Tensor> {
    let out = net.forward(&normalize(&pair.vis), &normalize(&pair.ir))?;
    Ok(denormalize(&out))
}

/// Mean loss, Qw and Qe of `net` over `pairs`, pairs scored in parallel.
pub fn evaluate(net: &FusionNet, pairs: &[&Pair], loss: &LossConfig) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::config("nothing to evaluate"));
    }
    let scores = crate::parallel::map_indexed(pairs.len(), |i| -> Result<(f64, f64, f64)> {
        let p = pairs[i];
        let fused = fuse_pair(net, p)?;
        let t = loss_terms(&p.vis, &p.ir, &fused, loss)?;
        Ok((t.total(loss), t.qw, t.qe))
    });
    let mut sum = (0.0, 0.0, 0.0);
    for s in scores {
        let (l, qw, qe) = s?;
        sum = (sum.0 + l, sum.1 + qw, sum.2 + qe);
    }
    let n = pairs.len() as f64;
    Ok(Evaluation {
        loss: sum.0 / n,
        qw: sum.1 / n,
        qe: sum.2 / n,
    })
}

/// Qw of the pixel-average fusion `½(luma(vis) + ir)`.
pub fn average_fusion_qw(pair: &Pair, window: &WindowConfig) -> Result<f64> {
    let y = metrics::luminance(&pair.vis)?;
    let mut avg = y.clone();
    for (a, b) in avg.data_mut().iter_mut().zip(pair.ir.data()) {
        *a = 0.5 * (*a + b);
    }
    metrics::qw(&y, &pair.ir, &avg, window)
}

fn batch(pairs: &[Pair], idx: &[usize], pick: impl Fn(&Pair) -> &Tensor) -> Result<Tensor> {
    let items: Vec<&Tensor> = idx.iter().map(|&i| pick(&pairs[i])).collect();
    Tensor::stack(&items)
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    net: &mut FusionNet,
    state: &mut OptimState,
    inputs: &[Pair],
    targets: &[Pair],
    idx: &[usize],
    loss: &LossConfig,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let bound = net.bind(&mut g, true);
    let vis = g.input(normalize(&batch(inputs, idx, |p| &p.vis)?));
    let ir = g.input(normalize(&batch(inputs, idx, |p| &p.ir)?));
    let out = bound.forward(&mut g, vis, ir)?;
    let fused = g.affine(out, 0.5, 0.5);
    let tv = g.input(batch(targets, idx, |p| &p.vis)?);
    let ti = g.input(batch(targets, idx, |p| &p.ir)?);
    let root = fusion_loss(&mut g, tv, ti, fused, loss)?;
    let value = g.value(root).item()?;
    if !value.is_finite() {
        return Err(Error::Training(format!("loss became {value}")));
    }
    g.backward(root)?;
    let grads: Vec<&Tensor> = bound
        .vars()
        .iter()
        .map(|&v| g.grad(v).expect("parameters are leaves"))
        .collect();
    let mut params: Vec<&mut Tensor> = net.parameters_mut().iter_mut().map(|p| &mut p.value).collect();
    adam_step(&mut params, &grads, state, lr)?;
    Ok(value)
}

/// Trains `net` on `data` for `cfg.epochs` epochs.
///
/// With `resume`, the network, optimizer and log are taken from the
/// checkpoint and training continues after its last completed epoch.
/// `on_epoch` sees the state after every epoch. A non-finite loss or gradient
/// aborts with a training error and leaves `net` at the last completed epoch.
pub fn fit(
    net: &mut FusionNet,
    data: &[Pair],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let (start, mut state, mut log) = match resume {
        Some(ck) => {
            if ck.seed != cfg.seed {
                return Err(Error::config(format!(
                    "checkpoint was trained with seed {}, config says {}",
                    ck.seed, cfg.seed
                )));
            }
            *net = ck.net;
            (ck.epoch, ck.optim, ck.log)
        }
        None => (
            0,
            OptimState::new(net.parameters().iter().map(|p| p.value.shape())),
            Vec::new(),
        ),
    };

    let parts = split(data.len(), cfg.heldout_fraction, cfg.seed);
    let scored: Vec<&Pair> = if parts.heldout.is_empty() {
        parts.train.iter().map(|&i| &data[i]).collect()
    } else {
        parts.heldout.iter().map(|&i| &data[i]).collect()
    };
    let eval_loss = LossConfig {
        window: cfg.eval_window(),
        ..cfg.loss
    };

    for epoch in start..cfg.epochs {
        let lr = lr_at(epoch, &cfg.schedule);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order = parts.train.clone();
        order.shuffle(&mut rng);

        let mut inputs = data.to_vec();
        for &i in &order {
            let (v, r) = augment(&data[i].vis, &data[i].ir, &cfg.augment, &mut rng);
            inputs[i] = Pair { vis: v, ir: r };
        }
        let targets = if cfg.clean_targets { data } else { &inputs[..] };

        let snapshot = net.clone();
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            match train_step(net, &mut state, &inputs, targets, idx, &cfg.loss, lr) {
                Ok(v) => total += v * idx.len() as f64,
                Err(Error::Training(why)) => {
                    *net = snapshot;
                    return Err(Error::Training(format!(
                        "epoch {epoch}, batch {b}: {why}; parameters restored to the last completed epoch"
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let held = evaluate(net, &scored, &eval_loss)?;
        log.push(EpochLog {
            epoch,
            lr,
            loss: total / order.len() as f64,
            heldout_loss: held.loss,
            heldout_qw: held.qw,
            heldout_qe: held.qe,
        });
        on_epoch(&Checkpoint {
            epoch: epoch + 1,
            seed: cfg.seed,
            net: net.clone(),
            optim: state.clone(),
            log: log.clone(),
        })?;
    }
    Ok(log)
}
