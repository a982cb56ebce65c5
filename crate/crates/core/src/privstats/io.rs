//! Report serialization: summary and raw-count CSVs, versioned JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{PrivacyStatsReport, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the report into `dir` and returns the created paths.
///
/// CSV writes `summary.csv` (one row per cell and statistic) and
/// `raw_counts.csv` (one row per cell and word); JSON writes the full raw
/// report as `report.json`.
pub fn emit_report(
    report: &PrivacyStatsReport,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, StatsError> {
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Csv => {
            let summary = dir.join("summary.csv");
            let raw = dir.join("raw_counts.csv");
            write_summary_csv(report, &summary)?;
            write_raw_counts_csv(report, &raw)?;
            Ok(vec![summary, raw])
        }
        ReportFormat::Json => {
            let path = dir.join("report.json");
            write_json(report, &path)?;
            Ok(vec![path])
        }
    }
}

/// `epsilon,lambda,stat,mean,std,ci_low,ci_high,p5,p50,p95`: two rows per
/// `(ε, λ)` cell, one for each statistic.
pub fn write_summary_csv(report: &PrivacyStatsReport, path: &Path) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epsilon", "lambda", "stat", "mean", "std", "ci_low", "ci_high", "p5", "p50", "p95",
    ])?;
    for cell in &report.cells {
        let summary = report.cell_summary(cell);
        for (stat, s) in [("N_w", summary.n_w), ("S_w", summary.s_w)] {
            w.write_record([
                cell.epsilon.to_string(),
                cell.lambda.to_string(),
                stat.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
                s.p5.to_string(),
                s.p50.to_string(),
                s.p95.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `epsilon,lambda,word,n_w,s_w`: one row per cell and word.
pub fn write_raw_counts_csv(report: &PrivacyStatsReport, path: &Path) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "lambda", "word", "n_w", "s_w"])?;
    for cell in &report.cells {
        for (i, word) in report.words.iter().enumerate() {
            w.write_record([
                cell.epsilon.to_string(),
                cell.lambda.to_string(),
                word.clone(),
                cell.n_w[i].to_string(),
                cell.s_w[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(report: &PrivacyStatsReport, path: &Path) -> Result<(), StatsError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json(path: &Path) -> Result<PrivacyStatsReport, StatsError> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
