use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use irfusion_core::io::{load_checkpoint, load_weights, save_checkpoint, save_weights, Checkpoint};
use irfusion_core::metrics::WindowConfig;
use irfusion_core::model::build_network;
use irfusion_core::parallel::map_indexed;
use irfusion_core::trainer::{evaluate, fit, split, synth_pairs, EpochLog, Pair};

use crate::cli::Command;
use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::image_io::{as_infrared, as_visible, images_by_stem, load_image, save_image};
use crate::report::{score_triple, ScoreMode, ScoreReport};
use crate::{bench, pipeline};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fuse { vis, ir, weights, out } => fuse(&vis, &ir, &weights, &out),
        Command::Eval {
            pairs,
            fused,
            out,
            stride,
            mode,
        } => eval(&pairs, &fused, &out, stride, mode).map(|_| ()),
        Command::Train { config, resume } => train(&config, resume).map(|_| ()),
        Command::Bench {
            weights,
            size,
            iters,
            warmup,
        } => {
            let net = load_weights(&weights)?;
            println!("{}", bench::run(&net, size, iters, warmup)?);
            Ok(())
        }
    }
}

pub fn fuse(vis: &Path, ir: &Path, weights: &Path, out: &Path) -> CliResult<()> {
    let net = load_weights(weights)?;
    let v = as_visible(load_image(vis)?)?;
    let i = as_infrared(load_image(ir)?)?;
    let start = Instant::now();
    let fused = pipeline::fuse(&net, &v, &i)?;
    let elapsed = start.elapsed();
    save_image(&fused, out)?;
    println!(
        "{}: {}x{} fused in {:.2} ms",
        out.display(),
        fused.shape().w(),
        fused.shape().h(),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

/// Joins `lists` on file stem. Stems missing from any list are returned
/// separately.
fn match_stems(lists: &[Vec<(String, PathBuf)>]) -> (Vec<(String, Vec<PathBuf>)>, Vec<String>) {
    let mut all: Vec<&String> = lists.iter().flatten().map(|(s, _)| s).collect();
    all.sort();
    all.dedup();
    let mut matched = Vec::new();
    let mut missing = Vec::new();
    for stem in all {
        let paths: Vec<Option<&PathBuf>> = lists
            .iter()
            .map(|l| l.iter().find(|(s, _)| s == stem).map(|(_, p)| p))
            .collect();
        if paths.iter().all(Option::is_some) {
            matched.push((stem.clone(), paths.into_iter().flatten().cloned().collect()));
        } else {
            missing.push(stem.clone());
        }
    }
    (matched, missing)
}

fn warn_unmatched(missing: &[String]) {
    if !missing.is_empty() {
        eprintln!(
            "warning: skipping {} unmatched name(s): {}",
            missing.len(),
            missing.join(", ")
        );
    }
}

pub fn eval(pairs: &Path, fused: &Path, out: &Path, stride: usize, mode: ScoreMode) -> CliResult<ScoreReport> {
    let window = WindowConfig::default().with_stride(stride);
    window.validate()?;
    let lists = [
        images_by_stem(&pairs.join("vis"))?,
        images_by_stem(&pairs.join("ir"))?,
        images_by_stem(fused)?,
    ];
    let (triples, missing) = match_stems(&lists);
    warn_unmatched(&missing);
    let rows = map_indexed(triples.len(), |k| -> CliResult<_> {
        let (name, paths) = &triples[k];
        let vis = as_visible(load_image(&paths[0])?)?;
        let ir = as_infrared(load_image(&paths[1])?)?;
        let f = as_visible(load_image(&paths[2])?)?;
        score_triple(name, &vis, &ir, &f, &window, mode)
            .map_err(|e| CliError::from(e).context(name))
    });
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;
    let report = ScoreReport::new(rows)
        .ok_or_else(|| CliError::Data(format!("no complete (vis, ir, fused) triples under {}", pairs.display())))?;
    let file = File::create(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    report.write_csv(BufWriter::new(file))?;
    println!(
        "{} triples, mean Qw {:.5} Qe {:.5} QwQe {:.5}; report written to {}",
        report.rows.len(),
        report.mean.qw,
        report.mean.qe,
        report.mean.qw_qe,
        out.display()
    );
    Ok(report)
}

/// Loads aligned pairs from `dir/vis` and `dir/ir`.
pub fn load_pairs(dir: &Path) -> CliResult<Vec<Pair>> {
    let lists = [images_by_stem(&dir.join("vis"))?, images_by_stem(&dir.join("ir"))?];
    let (matched, missing) = match_stems(&lists);
    warn_unmatched(&missing);
    matched
        .iter()
        .map(|(name, p)| {
            let vis = as_visible(load_image(&p[0])?)?;
            let ir = as_infrared(load_image(&p[1])?)?;
            Pair::new(vis, ir).map_err(|e| CliError::from(e).context(name))
        })
        .collect()
}

pub fn write_log(log: &[EpochLog], path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["epoch", "lr", "loss", "heldout_loss", "heldout_qw", "heldout_qe"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.loss.to_string(),
            e.heldout_loss.to_string(),
            e.heldout_qw.to_string(),
            e.heldout_qe.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Outcome of a training run.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub initial_heldout_qw: f64,
    pub log: Vec<EpochLog>,
    pub final_weights: PathBuf,
}

pub fn train(config: &Path, resume: Option<PathBuf>) -> CliResult<TrainSummary> {
    let mut cfg = RunConfig::load(config)?;
    if resume.is_some() {
        cfg.resume = resume;
    }
    let data = match &cfg.data {
        DataSource::Synth { n, size, seed } => synth_pairs(*n, *size, *seed)?,
        DataSource::Dir(dir) => load_pairs(dir)?,
    };
    if data.is_empty() {
        return Err(CliError::Data("no training pairs found".into()));
    }
    let m = cfg.net.divisor();
    if let Some(p) = data.iter().find(|p| p.vis.shape().h() % m != 0 || p.vis.shape().w() % m != 0) {
        return Err(CliError::Data(format!(
            "training images must have sides divisible by {m}, got {}x{}",
            p.vis.shape().w(),
            p.vis.shape().h()
        )));
    }

    let mut net = build_network(cfg.net, cfg.train.seed)?;
    let checkpoint = match &cfg.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.net.config() != &cfg.net {
                return Err(CliError::Usage(format!(
                    "{}: checkpoint network differs from the configured one",
                    path.display()
                )));
            }
            println!("resuming after epoch {} from {}", ck.epoch, path.display());
            Some(ck)
        }
        None => None,
    };

    let parts = split(data.len(), cfg.train.heldout_fraction, cfg.train.seed);
    let held: Vec<&Pair> = if parts.heldout.is_empty() {
        parts.train.iter().map(|&i| &data[i]).collect()
    } else {
        parts.heldout.iter().map(|&i| &data[i]).collect()
    };
    let eval_loss = irfusion_core::loss::LossConfig {
        window: cfg.train.eval_window(),
        ..cfg.train.loss
    };
    let start_net = checkpoint.as_ref().map_or(&net, |ck| &ck.net);
    let initial = evaluate(start_net, &held, &eval_loss)?;
    println!(
        "{} training / {} held-out pairs, {} parameters; initial held-out Qw {:.5}",
        parts.train.len(),
        parts.heldout.len(),
        net.parameter_count(),
        initial.qw
    );

    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let started = Instant::now();
    let log = fit(&mut net, &data, &cfg.train, checkpoint, |ck: &Checkpoint| {
        let e = ck.log.last().expect("a checkpoint follows an epoch");
        println!(
            "epoch {:>3}  lr {:.6}  loss {:.5}  held-out loss {:.5}  Qw {:.5}  Qe {:.5}  [{:.1} s]",
            e.epoch,
            e.lr,
            e.loss,
            e.heldout_loss,
            e.heldout_qw,
            e.heldout_qe,
            started.elapsed().as_secs_f64()
        );
        save_weights(&ck.net, &out.join(format!("epoch_{:03}.fsn", ck.epoch)))?;
        save_checkpoint(ck, &out.join("checkpoint.fsc"))?;
        write_log(&ck.log, &out.join("training_log.csv"))
            .map_err(|e| irfusion_core::Error::Io {
                path: out.join("training_log.csv"),
                source: std::io::Error::other(e.to_string()),
            })
    })?;
    let final_weights = out.join("final.fsn");
    save_weights(&net, &final_weights)?;
    if let Some(last) = log.last() {
        println!(
            "held-out Qw {:.5} -> {:.5}; weights written to {}",
            initial.qw,
            last.heldout_qw,
            final_weights.display()
        );
    }
    Ok(TrainSummary {
        initial_heldout_qw: initial.qw,
        log,
        final_weights,
    })
}
