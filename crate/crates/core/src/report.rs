//! Comparison-table output: CSV for machines, an aligned text table for eyes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::MetricsRow;
use crate::policy::fmt_f64;

pub const CSV_HEADER: &str = "method,pct_early,type_i,power,fdr,avg_weeks,avg_opp_cost,avg_launch_impact,avg_exp_impact,avg_reward,reward_stderr";

const COLUMNS: usize = 11;

/// Render rows as CSV with 17-significant-digit numerics.  The power column
/// is empty when undefined (no true-effect experiments).
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.method);
        for v in [
            Some(row.pct_early),
            Some(row.type_i),
            row.power,
            Some(row.fdr),
            Some(row.avg_weeks),
            Some(row.avg_opp_cost),
            Some(row.avg_launch_impact),
            Some(row.avg_exp_impact),
            Some(row.avg_reward),
            Some(row.reward_stderr),
        ] {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parse a CSV produced by [`metrics_to_csv`].
pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidConfig {
                field: "csv header".into(),
                reason: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS {
            return Err(Error::InvalidConfig {
                field: format!("csv line {}", lineno + 2),
                reason: format!("expected {COLUMNS} fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::InvalidConfig {
                field: format!("csv line {} column {}", lineno + 2, i + 1),
                reason: format!("bad number {:?}", fields[i]),
            })
        };
        rows.push(MetricsRow {
            method: fields[0].to_string(),
            pct_early: num(1)?,
            type_i: num(2)?,
            power: if fields[3].is_empty() {
                None
            } else {
                Some(num(3)?)
            },
            fdr: num(4)?,
            avg_weeks: num(5)?,
            avg_opp_cost: num(6)?,
            avg_launch_impact: num(7)?,
            avg_exp_impact: num(8)?,
            avg_reward: num(9)?,
            reward_stderr: num(10)?,
        });
    }
    Ok(rows)
}

/// Render an aligned plain-text table (shorter numerics for readability).
pub fn metrics_to_table(rows: &[MetricsRow]) -> String {
    let headers = [
        "method",
        "pct_early",
        "type_i",
        "power",
        "fdr",
        "avg_weeks",
        "avg_opp_cost",
        "avg_launch_impact",
        "avg_exp_impact",
        "avg_reward",
        "reward_stderr",
    ];
    let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for row in rows {
        let fmt = |v: f64| format!("{v:.6}");
        cells.push(vec![
            row.method.clone(),
            fmt(row.pct_early),
            fmt(row.type_i),
            row.power.map(fmt).unwrap_or_else(|| "-".into()),
            fmt(row.fdr),
            fmt(row.avg_weeks),
            fmt(row.avg_opp_cost),
            fmt(row.avg_launch_impact),
            fmt(row.avg_exp_impact),
            fmt(row.avg_reward),
            fmt(row.reward_stderr),
        ]);
    }
    let mut widths = vec![0usize; COLUMNS];
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        for (i, (cell, w)) in row.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(&format!("{cell:>w$}", w = w));
        }
        out.push('\n');
    }
    out
}

/// Write both report files into `dir`: `metrics.csv` and `metrics.txt`.
pub fn write_report(rows: &[MetricsRow], dir: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let csv_path = dir.join("metrics.csv");
    let txt_path = dir.join("metrics.txt");
    std::fs::write(&csv_path, metrics_to_csv(rows)).map_err(|source| Error::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    std::fs::write(&txt_path, metrics_to_table(rows)).map_err(|source| Error::Io {
        path: txt_path.display().to_string(),
        source,
    })?;
    Ok((csv_path, txt_path))
}

/// Policy-slice grid as CSV: axis-2 values across the first row, axis-1
/// values down the first column, action codes in the body.
pub fn slice_to_csv(
    axis1: (&str, &[f64]),
    axis2: (&str, &[f64]),
    grid: &[Vec<crate::env::Action>],
) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\\{}", axis1.0, axis2.0));
    for v in axis2.1 {
        out.push(',');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
    for (v1, row) in axis1.1.iter().zip(grid) {
        out.push_str(&fmt_f64(*v1));
        for action in row {
            out.push(',');
            out.push_str(&action.code().to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, power: Option<f64>) -> MetricsRow {
        MetricsRow {
            method: method.into(),
            pct_early: 0.25,
            type_i: 0.01,
            power,
            fdr: 1.0 / 3.0,
            avg_weeks: 3.64,
            avg_opp_cost: 2.48,
            avg_launch_impact: 4.24,
            avg_exp_impact: -0.001,
            avg_reward: 1.83,
            reward_stderr: 0.07,
        }
    }

    #[test]
    fn empty_rows_give_header_only_csv() {
        let csv = metrics_to_csv(&[]);
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
        assert!(metrics_from_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![row("alpha_spending", Some(0.42)), row("ffht", None)];
        let csv = metrics_to_csv(&rows);
        let back = metrics_from_csv(&csv).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn table_renders_all_columns() {
        let table = metrics_to_table(&[row("bf_3", Some(0.5))]);
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        let body = lines.next().unwrap();
        assert_eq!(header.split_whitespace().count(), 11);
        assert_eq!(body.split_whitespace().count(), 11);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(metrics_from_csv("nope\n").is_err());
    }
}
