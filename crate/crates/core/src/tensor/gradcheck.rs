//! Central finite-difference verification of [`Graph::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Probe at most this many elements per input (seeded sample); `None`
    /// probes every element.
    pub probes_per_input: Option<usize>,
    pub seed: u64,
    /// When set, every probe is also differenced with a step ten times
    /// smaller. Probes whose two estimates differ by more than this relative
    /// amount straddle a non-differentiable point (a ReLU kink, say) and are
    /// excluded instead of compared.
    pub kink_tolerance: Option<f64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            probes_per_input: None,
            seed: 0,
            kink_tolerance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes excluded by the kink guard.
    pub kinked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheck {
    pub fn with_probes(mut self, n: usize) -> Self {
        self.probes_per_input = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_kink_guard(mut self, tolerance: f64) -> Self {
        self.kink_tolerance = Some(tolerance);
        self
    }

    /// Compares autodiff gradients of the scalar `f(inputs)` against central
    /// differences. `f` receives the inputs as differentiable leaves, in order.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync,
    {
        let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
            let root = f(&mut g, &vars)?;
            g.value(root).item()
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
        let root = f(&mut g, &vars)?;
        g.backward(root)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(x.shape()))
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut probes = Vec::new();
        for (i, x) in inputs.iter().enumerate() {
            match self.probes_per_input {
                Some(k) if k < x.len() => {
                    let mut idx = sample(&mut rng, x.len(), k).into_vec();
                    idx.sort_unstable();
                    probes.extend(idx.into_iter().map(|e| (i, e)));
                }
                _ => probes.extend((0..x.len()).map(|e| (i, e))),
            }
        }

        let central = |i: usize, e: usize, h: f64| -> Result<f64> {
            let mut xs = inputs.to_vec();
            let x0 = xs[i].data()[e];
            xs[i].data_mut()[e] = x0 + h;
            let plus = eval(&xs)?;
            xs[i].data_mut()[e] = x0 - h;
            let minus = eval(&xs)?;
            Ok((plus - minus) / (2.0 * h))
        };
        let numeric = crate::parallel::map_indexed(probes.len(), |p| {
            let (i, e) = probes[p];
            let d = central(i, e, self.step)?;
            let smooth = match self.kink_tolerance {
                Some(tol) => relative_error(d, central(i, e, self.step / 10.0)?) <= tol,
                None => true,
            };
            Ok((d, smooth))
        });

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            probes: probes.len(),
            kinked: 0,
            worst: None,
        };
        for (&(i, e), num) in probes.iter().zip(numeric) {
            let (num, smooth): (f64, bool) = num?;
            if !smooth {
                report.kinked += 1;
                continue;
            }
            let ana = analytic[i].data()[e];
            if !num.is_finite() || !ana.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at input {i} element {e}: analytic {ana}, numeric {num}"
                )));
            }
            let err = relative_error(ana, num);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    input: i,
                    element: e,
                    analytic: ana,
                    numeric: num,
                });
            }
        }
        Ok(report)
    }
}
