//! Reshapes results tables into long `(x, y, series)` rows.

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::run::{fmt_num, CLASSIFY_COLUMNS, PROBE_COLUMNS, REGRESS_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2a,
    Fig2b,
    Fig3b,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

fn mismatch(msg: impl Into<String>) -> CliError {
    CliError::SchemaMismatch(msg.into())
}

fn read_table(path: &Path, expected: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| mismatch(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected {
        return Err(mismatch(format!("expected columns {expected:?}, found {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| mismatch(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| mismatch(format!("row {}: bad value {f:?}", i + 1))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(mismatch(format!("{} has no data rows", path.display())));
    }
    Ok(rows)
}

/// Long-format rows for `figure` from a results table of the matching experiment.
pub fn emit_plot_data(results: &Path, figure: Figure) -> CliResult<Vec<PlotRow>> {
    let mut out = Vec::new();
    match figure {
        Figure::Fig1 => {
            let rows = read_table(results, &CLASSIFY_COLUMNS)?;
            for (col, name) in [(1, "test_log_likelihood"), (2, "top1_accuracy")] {
                for r in &rows {
                    out.push(PlotRow {
                        x: r[0],
                        y: r[col],
                        series: name.to_string(),
                    });
                }
            }
        }
        Figure::Fig2a | Figure::Fig2b => {
            let col = if figure == Figure::Fig2a { 2 } else { 3 };
            for r in read_table(results, &PROBE_COLUMNS)? {
                out.push(PlotRow {
                    x: r[1],
                    y: r[col],
                    series: format!("c={}", fmt_num(r[0])),
                });
            }
            // Group by series, keeping first-appearance order of series and points.
            let mut order: Vec<String> = Vec::new();
            for p in &out {
                if !order.contains(&p.series) {
                    order.push(p.series.clone());
                }
            }
            out.sort_by_key(|p| order.iter().position(|s| *s == p.series));
        }
        Figure::Fig3b => {
            // Mean test NLL over seeds for each (noise level, temperature).
            let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
            for r in read_table(results, &REGRESS_COLUMNS)? {
                let (t, nll, noise) = (r[0], r[1], r[3]);
                match groups.iter_mut().find(|g| g.0 == noise && g.1 == t) {
                    Some(g) => {
                        g.2 += nll;
                        g.3 += 1;
                    }
                    None => groups.push((noise, t, nll, 1)),
                }
            }
            for (noise, t, sum, n) in groups {
                out.push(PlotRow {
                    x: t,
                    y: sum / n as f64,
                    series: format!("noise_std={}", fmt_num(noise)),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_plot_rows<W: Write>(rows: &[PlotRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "series"])?;
    for r in rows {
        w.write_record([fmt_num(r.x), fmt_num(r.y), r.series.clone()])?;
    }
    w.flush()?;
    Ok(())
}
