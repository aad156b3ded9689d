//! Training configuration files: UTF-8 `key = value` lines, `#` comments.
//!
//! ```text
//! data = synth:32,64,7
//! output = runs/desk
//! epochs = 30
//! milestones = 10, 20, 30
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use irfusion_core::model::NetConfig;
use irfusion_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

/// Where training pairs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth { n: usize, size: usize, seed: u64 },
    /// A directory with `vis/` and `ir/` subdirectories matched by stem.
    Dir(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub output: PathBuf,
    pub resume: Option<PathBuf>,
    pub train: TrainConfig,
    pub net: NetConfig,
}

pub const KEYS: [&str; 25] = [
    "data",
    "output",
    "resume",
    "epochs",
    "batch_size",
    "seed",
    "lr",
    "milestones",
    "lr_factor",
    "alpha",
    "beta",
    "gamma",
    "window",
    "train_stride",
    "eval_stride",
    "epsilon",
    "heldout_fraction",
    "blur_sigma",
    "noise_sigma",
    "blur_probability",
    "noise_probability",
    "clean_targets",
    "base_channels",
    "levels",
    "kernel_size",
];

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {v:?}: {e}"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn range(v: &str) -> Result<(f64, f64), String> {
    match list::<f64>(v)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(format!("expected `low, high`, got {v:?}")),
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn data_source(v: &str) -> Result<DataSource, String> {
    match v.strip_prefix("synth:") {
        Some(rest) => match list::<u64>(rest)?.as_slice() {
            [n, size, seed] => Ok(DataSource::Synth {
                n: *n as usize,
                size: *size as usize,
                seed: *seed,
            }),
            _ => Err(format!("expected synth:n,size,seed, got {v:?}")),
        },
        None => Ok(DataSource::Dir(PathBuf::from(v))),
    }
}

impl RunConfig {
    /// Parses config text. Unknown, repeated or malformed keys are errors
    /// naming the line; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut data = None;
        let mut output = None;
        let mut resume = None;
        let mut train = TrainConfig::default();
        let mut net = NetConfig::default();
        let mut seen = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Usage(format!("config line {}: {msg}: {raw}", i + 1));
            let Some((key, value)) = line.split_once('=') else {
                return Err(err("expected `key = value`".into()));
            };
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key `{key}` given twice")));
            }
            let path = |v: &str| base.join(v);
            let set: Result<(), String> = (|| {
                match key {
                    "data" => {
                        data = Some(match data_source(v)? {
                            DataSource::Dir(d) => DataSource::Dir(base.join(d)),
                            s => s,
                        })
                    }
                    "output" => output = Some(path(v)),
                    "resume" => resume = Some(path(v)),
                    "epochs" => train.epochs = parse(v)?,
                    "batch_size" => train.batch_size = parse(v)?,
                    "seed" => train.seed = parse(v)?,
                    "lr" => train.schedule.base_lr = parse(v)?,
                    "milestones" => train.schedule.milestones = list(v)?,
                    "lr_factor" => train.schedule.factor = parse(v)?,
                    "alpha" => train.loss.alpha = parse(v)?,
                    "beta" => train.loss.beta = parse(v)?,
                    "gamma" => train.loss.gamma = parse(v)?,
                    "window" => train.loss.window.window_size = parse(v)?,
                    "train_stride" => train.loss.window.stride = parse(v)?,
                    "eval_stride" => train.eval_stride = parse(v)?,
                    "epsilon" => train.loss.window.epsilon = parse(v)?,
                    "heldout_fraction" => train.heldout_fraction = parse(v)?,
                    "blur_sigma" => train.augment.blur_sigma = range(v)?,
                    "noise_sigma" => train.augment.noise_sigma = range(v)?,
                    "blur_probability" => train.augment.blur_probability = parse(v)?,
                    "noise_probability" => train.augment.noise_probability = parse(v)?,
                    "clean_targets" => train.clean_targets = boolean(v)?,
                    "base_channels" => net.base_channels = parse(v)?,
                    "levels" => net.levels = parse(v)?,
                    "kernel_size" => net.kernel_size = parse(v)?,
                    _ => unreachable!("key list and match arms agree"),
                }
                Ok(())
            })();
            set.map_err(err)?;
        }

        let data = data.ok_or_else(|| CliError::Usage("config: missing key `data`".into()))?;
        let output = output.ok_or_else(|| CliError::Usage("config: missing key `output`".into()))?;
        train.validate()?;
        net.validate()?;
        Ok(RunConfig {
            data,
            output,
            resume,
            train,
            net,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
