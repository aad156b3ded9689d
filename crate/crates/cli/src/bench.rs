//! Single-threaded latency measurement of the fusion network.

use std::fmt;
use std::time::Instant;

use irfusion_core::model::FusionNet;
use irfusion_core::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pipeline;

/// GPU latency reported for the reference implementation, printed for
/// comparison only.
pub const REFERENCE_GPU_SECONDS: f64 = 0.0056;

/// Summary of a set of timed samples, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub fps: f64,
}

impl Timing {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "timing needs at least one sample");
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // Nearest rank.
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Timing {
            samples,
            mean,
            median,
            p95: sorted[rank - 1],
            fps: 1.0 / mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub size: usize,
    pub warmup: usize,
    /// Network forward pass on prepared 32-bit inputs.
    pub forward: Timing,
    /// Padding, normalization, forward, cropping and 8-bit quantization.
    pub end_to_end: Timing,
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, size: usize) -> Tensor {
    Tensor::from_fn(Shape::new(1, c, size, size), |_, _, _, _| rng.random::<f64>())
}

fn time<R>(f: impl FnOnce() -> Result<R>) -> Result<f64> {
    let t = Instant::now();
    std::hint::black_box(f()?);
    Ok(t.elapsed().as_secs_f64())
}

/// Times `iters` runs after `warmup` untimed ones on a single worker thread.
pub fn run(net: &FusionNet, size: usize, iters: usize, warmup: usize) -> crate::CliResult<BenchReport> {
    if size == 0 || iters == 0 {
        return Err(crate::CliError::Usage("bench needs a positive size and iteration count".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| crate::CliError::Numeric(format!("thread pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vis = random_image(&mut rng, 3, size);
    let ir = random_image(&mut rng, 1, size);
    let (pv, pi, _) = pipeline::prepare(net, &vis, &ir)?;

    let report = pool.install(|| -> Result<BenchReport> {
        for _ in 0..warmup {
            pipeline::fuse(net, &vis, &ir)?;
        }
        let mut forward = Vec::with_capacity(iters);
        let mut end_to_end = Vec::with_capacity(iters);
        for _ in 0..iters {
            forward.push(time(|| net.forward_as(&pv, &pi))?);
            end_to_end.push(time(|| {
                let fused = pipeline::fuse(net, &vis, &ir)?;
                Ok(pipeline::quantize(&fused))
            })?);
        }
        Ok(BenchReport {
            size,
            warmup,
            forward: Timing::from_samples(forward),
            end_to_end: Timing::from_samples(end_to_end),
        })
    })?;
    Ok(report)
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}x{} input, {} timed iterations after {} warm-up, 1 thread",
            self.size,
            self.size,
            self.forward.samples.len(),
            self.warmup
        )?;
        writeln!(f, "{:<12} {:>12} {:>12} {:>12} {:>10}", "", "mean s", "median s", "p95 s", "fps")?;
        for (name, t) in [("forward", &self.forward), ("end-to-end", &self.end_to_end)] {
            writeln!(
                f,
                "{:<12} {:>12.6} {:>12.6} {:>12.6} {:>10.2}",
                name, t.mean, t.median, t.p95, t.fps
            )?;
        }
        write!(
            f,
            "* reference: {REFERENCE_GPU_SECONDS} s per image on a GPU, not comparable to this CPU figure"
        )
    }
}
