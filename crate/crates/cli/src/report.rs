//! Per-triple fusion scores and their CSV report.

use std::io::Write;

use irfusion_core::metrics::{self, EdgeConfig, WindowConfig};
use irfusion_core::{Result, Tensor};

use crate::error::CliResult;

/// How three-channel images are reduced before scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum ScoreMode {
    /// Score the luminance of the visible and fused images.
    #[default]
    Luminance,
    /// Mean of the scores of each colour channel against the infrared image.
    PerChannel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub name: String,
    pub qw: f64,
    pub qe: f64,
    pub qw_qe: f64,
    pub mse_vis: f64,
    pub mse_ir: f64,
}

impl ScoreRow {
    pub fn new(name: impl Into<String>, qw: f64, qe: f64, mse_vis: f64, mse_ir: f64) -> Self {
        ScoreRow {
            name: name.into(),
            qw,
            qe,
            qw_qe: qw * qe,
            mse_vis,
            mse_ir,
        }
    }
}

/// Scores a fused image against its sources. `vis` and `fused` have three
/// channels, `ir` one.
pub fn score_triple(
    name: &str,
    vis: &Tensor,
    ir: &Tensor,
    fused: &Tensor,
    window: &WindowConfig,
    mode: ScoreMode,
) -> Result<ScoreRow> {
    let edges = EdgeConfig::default();
    let fy = metrics::luminance(fused)?;
    let (qw, qe) = match mode {
        ScoreMode::Luminance => {
            let vy = metrics::luminance(vis)?;
            (
                metrics::qw(&vy, ir, &fy, window)?,
                metrics::qe(&vy, ir, &fy, window, &edges)?,
            )
        }
        ScoreMode::PerChannel => (
            metrics::qw_per_channel(vis, ir, fused, window)?,
            metrics::qw_per_channel(
                &edges.edge_map(vis)?,
                &edges.edge_map(ir)?,
                &edges.edge_map(fused)?,
                window,
            )?,
        ),
    };
    Ok(ScoreRow::new(
        name,
        qw,
        qe,
        metrics::mse(vis, fused)?,
        metrics::mse(ir, &fy)?,
    ))
}

/// Rows sorted by name, plus their column means. The mean row's `qw_qe` is
/// the product of the mean Qw and mean Qe.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub mean: ScoreRow,
}

impl ScoreReport {
    /// `None` for an empty row set.
    pub fn new(mut rows: Vec<ScoreRow>) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let n = rows.len() as f64;
        let avg = |f: fn(&ScoreRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean = ScoreRow::new(
            "mean",
            avg(|r| r.qw),
            avg(|r| r.qe),
            avg(|r| r.mse_vis),
            avg(|r| r.mse_ir),
        );
        Some(ScoreReport { rows, mean })
    }

    /// Header, one line per row, then the mean row. Values are written at
    /// full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "qw", "qe", "qw_qe", "mse_vis", "mse_ir"])?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.write_record([
                r.name.clone(),
                r.qw.to_string(),
                r.qe.to_string(),
                r.qw_qe.to_string(),
                r.mse_vis.to_string(),
                r.mse_ir.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
