//! CSV tables for evaluation, sweep and uncertainty-study reports. All
//! lengths are in mm.

use std::io::Write;

use super::eval::{EvalReport, SweepReport};
use super::uq::UqTrendReport;
use crate::Result;

fn write_table<W: Write>(writer: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const COMPARISON_HEADER: [&str; 8] = [
    "family",
    "average_rmse_mm",
    "maximum_rmse_mm",
    "minimum_rmse_mm",
    "std_dev_mm",
    "prediction_range_mm",
    "iterations",
    "failed",
];

/// One row per family with the aggregate test-RMSE statistics.
pub fn write_comparison_csv<W: Write>(writer: W, reports: &[EvalReport]) -> Result<()> {
    write_table(
        writer,
        &COMPARISON_HEADER,
        reports.iter().map(|r| {
            vec![
                r.family.to_string(),
                r.test.average.to_string(),
                r.test.maximum.to_string(),
                r.test.minimum.to_string(),
                r.test.std_dev.to_string(),
                r.test.prediction_range.to_string(),
                r.iterations.len().to_string(),
                r.failed.to_string(),
            ]
        }),
    )
}

pub fn write_iterations_csv<W: Write>(writer: W, report: &EvalReport) -> Result<()> {
    write_table(
        writer,
        &[
            "outer",
            "inner",
            "iteration",
            "test_rmse_mm",
            "train_rmse_mm",
            "chosen",
            "error",
        ],
        report.iterations.iter().map(|i| {
            vec![
                i.outer.to_string(),
                i.inner.to_string(),
                i.iteration.to_string(),
                opt(i.test_rmse),
                opt(i.train_rmse),
                i.chosen
                    .as_ref()
                    .map(|c| serde_json::to_string(c).expect("json values serialize"))
                    .unwrap_or_default(),
                i.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_sweep_csv<W: Write>(writer: W, report: &SweepReport) -> Result<()> {
    write_table(
        writer,
        &[
            "train_fraction",
            "train_rmse_mean_mm",
            "train_rmse_std_mm",
            "test_rmse_mean_mm",
            "test_rmse_std_mm",
            "iterations",
            "failed",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.fraction.to_string(),
                r.train_mean.to_string(),
                r.train_std.to_string(),
                r.test_mean.to_string(),
                r.test_std.to_string(),
                r.iterations.to_string(),
                r.failed.to_string(),
            ]
        }),
    )
}

pub fn write_uq_trend_csv<W: Write>(writer: W, report: &UqTrendReport) -> Result<()> {
    write_table(
        writer,
        &[
            "train_fraction",
            "aleatoric_mean_mm",
            "aleatoric_std_mm",
            "epistemic_mean_mm",
            "epistemic_std_mm",
            "rmse_mean_mm",
            "rmse_std_mm",
            "seeds",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.fraction.to_string(),
                r.aleatoric_mean.to_string(),
                r.aleatoric_std.to_string(),
                r.epistemic_mean.to_string(),
                r.epistemic_std.to_string(),
                r.rmse_mean.to_string(),
                r.rmse_std.to_string(),
                r.replicates.len().to_string(),
            ]
        }),
    )
}
