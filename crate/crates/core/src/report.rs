//! Report files: metrics/scatter CSVs, coverage JSON, histogram CSVs, and
//! the run manifest. CSV floats use Rust's shortest round-trip formatting so
//! re-reading reproduces values exactly.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::bootstrap::CoverageReport;
use crate::error::Result;
use crate::simgen::{MetricsRow, ScatterPoint};

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "estimator,bias,rmse,mae,n_iterations_used,n_failures")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.estimator, row.bias, row.rmse, row.mae, row.n_iterations_used, row.n_failures
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "estimator,truth,estimate")?;
    for p in points {
        writeln!(out, "{},{},{}", p.estimator, p.truth, p.estimate)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.flush()?;
    Ok(())
}

/// Histogram data (bin edges + counts) for the error/SE ratio samples of one
/// estimator. Non-finite samples are excluded from the bins and reported in
/// the trailing overflow counts.
pub fn write_histogram_csv(path: &Path, samples: &[f64], n_bins: usize) -> Result<()> {
    let finite: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    let n_neg_inf = samples.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    let n_pos_inf = samples.iter().filter(|v| **v == f64::INFINITY).count();

    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "bin_lo,bin_hi,count")?;
    if !finite.is_empty() {
        let mut lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &v in &finite {
            let mut bin = ((v - lo) / width) as usize;
            if bin >= n_bins {
                bin = n_bins - 1;
            }
            counts[bin] += 1;
        }
        for (b, &count) in counts.iter().enumerate() {
            let bin_lo = lo + b as f64 * width;
            let bin_hi = lo + (b + 1) as f64 * width;
            writeln!(out, "{bin_lo},{bin_hi},{count}")?;
        }
    }
    if n_neg_inf > 0 {
        writeln!(out, "-inf,-inf,{n_neg_inf}")?;
    }
    if n_pos_inf > 0 {
        writeln!(out, "inf,inf,{n_pos_inf}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `coverage.json` plus one `hist_<estimator>.csv` per estimator.
pub fn write_coverage_outputs(dir: &Path, report: &CoverageReport, n_bins: usize) -> Result<()> {
    write_json(&dir.join("coverage.json"), report)?;
    for cov in &report.per_estimator {
        let path = dir.join(format!("hist_{}.csv", cov.estimator));
        write_histogram_csv(&path, &cov.error_over_se_samples, n_bins)?;
    }
    Ok(())
}

/// Echo of everything that determined a run. Re-running with the same
/// manifest reproduces outputs bitwise, timestamp aside.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub weight_formula: String,
    pub match_mode: String,
    pub version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seed: u64,
        weight_formula: &str,
        match_mode: &str,
    ) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            weight_formula: weight_formula.to_string(),
            match_mode: match_mode.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}
