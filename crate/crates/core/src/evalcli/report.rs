//! Evaluation report rows, BD-rate summaries and their CSV forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bdrate::{MetricId, RDCurve};
use crate::error::Result;

/// Tool label of codec-only rows.
pub const ANCHOR: &str = "anchor";

/// One coded operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sequence: String,
    pub tool: String,
    pub qp: u32,
    pub bitrate_kbps: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
    /// Empty unless an external metric program produced it.
    pub external_metric: Option<f64>,
}

impl EvalRow {
    pub fn quality(&self, metric: MetricId) -> Option<f64> {
        match metric {
            MetricId::Psnr => Some(self.psnr),
            MetricId::Ssim => Some(self.ssim),
            MetricId::MsSsim => Some(self.msssim).filter(|v| v.is_finite()),
            MetricId::External => self.external_metric,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdRow {
    pub sequence: String,
    pub tool: String,
    pub metric: MetricId,
    pub bd_rate_percent: f64,
}

/// A failure confined to one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceError {
    pub sequence: String,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub bd_rates: Vec<BdRow>,
    pub errors: Vec<SequenceError>,
}

impl EvalReport {
    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }

    pub fn push_error(&mut self, sequence: &str, stage: &str, err: impl std::fmt::Display) {
        self.errors.push(SequenceError {
            sequence: sequence.to_string(),
            stage: stage.to_string(),
            message: err.to_string(),
        });
    }

    /// The RD curve of `sequence` under `tool`; `None` when the metric is
    /// missing at any point.
    pub fn curve(&self, sequence: &str, tool: &str, metric: MetricId) -> Option<Result<RDCurve>> {
        let pts: Option<Vec<(f64, f64)>> = self
            .rows
            .iter()
            .filter(|r| r.sequence == sequence && r.tool == tool)
            .map(|r| r.quality(metric).map(|q| (r.bitrate_kbps, q)))
            .collect();
        pts.filter(|p| !p.is_empty()).map(|p| RDCurve::new(p, metric))
    }

    pub fn bd_rate(&self, sequence: &str, tool: &str, metric: MetricId) -> Option<f64> {
        self.bd_rates
            .iter()
            .find(|b| b.sequence == sequence && b.tool == tool && b.metric == metric)
            .map(|b| b.bd_rate_percent)
    }

    /// Mean BD-rate of one tool and metric over the sequences that have it.
    pub fn mean_bd_rate(&self, tool: &str, metric: MetricId) -> Option<f64> {
        let v: Vec<f64> = self
            .bd_rates
            .iter()
            .filter(|b| b.tool == tool && b.metric == metric)
            .map(|b| b.bd_rate_percent)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `sequence,tool,qp,bitrate_kbps,psnr,ssim,msssim,external_metric`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, EVAL_HEADER, &self.rows)
    }

    pub fn write_bd_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &["sequence", "tool", "metric", "bd_rate_percent"], &self.bd_rates)
    }

    pub fn write_errors_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &["sequence", "stage", "message"], &self.errors)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Short human-readable digest.
    pub fn summary(&self) -> String {
        let mut s = format!("{} operating points, {} BD-rates, {} errors\n", self.rows.len(), self.bd_rates.len(), self.errors.len());
        for b in &self.bd_rates {
            s += &format!("  {} {} {}: {:+.3}%\n", b.sequence, b.tool, b.metric, b.bd_rate_percent);
        }
        for e in &self.errors {
            s += &format!("  error in {} ({}): {}\n", e.sequence, e.stage, e.message);
        }
        s
    }
}

const EVAL_HEADER: &[&str] = &["sequence", "tool", "qp", "bitrate_kbps", "psnr", "ssim", "msssim", "external_metric"];

/// Serializes `rows`; an empty table still gets its header.
pub(crate) fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
