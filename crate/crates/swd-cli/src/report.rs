//! CSV and PGM emission. All reals are printed with 17 significant
//! digits so files are bitwise reproducible and round-trip exactly;
//! line endings are LF.

use std::io::Write;
use std::path::Path;

use swd_core::StepRecord;

use crate::CliResult;

/// 17-significant-digit rendering (1 leading + 16 fractional digits).
pub fn fmt_real(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub const HISTORY_HEADER: &str =
    "iteration,source_loss,discrepancy_before_step3,discrepancy_after_step3,source_accuracy,target_accuracy";

pub fn history_rows(records: &[StepRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_real(r.source_loss),
                fmt_real(r.discrepancy_before_step3),
                fmt_real(r.discrepancy_after_step3),
                fmt_real(r.source_accuracy),
                fmt_real(r.target_accuracy),
            ]
        })
        .collect()
}

pub fn write_history(path: &Path, records: &[StepRecord]) -> CliResult<()> {
    write_csv(path, HISTORY_HEADER, &history_rows(records))
}

/// Plain-text PGM (P2). `grid` is row-major with `width` columns; the
/// caller orders rows top-first. `maxval` is the largest class index.
pub fn write_pgm(path: &Path, grid: &[usize], width: usize, maxval: usize) -> CliResult<()> {
    let height = grid.len() / width;
    let mut out = format!("P2\n{width} {height}\n{maxval}\n");
    for row in grid.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Dataset export: `x0,...,x{d-1},label` per row.
pub fn write_dataset_csv(path: &Path, ds: &swd_core::LabeledDataset) -> CliResult<()> {
    let d = ds.dim();
    let mut header = (0..d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    header.push_str(",label");
    let rows: Vec<Vec<String>> = (0..ds.len())
        .map(|i| {
            let mut row: Vec<String> = ds.points().row(i).iter().map(|&v| fmt_real(v)).collect();
            row.push(ds.labels()[i].to_string());
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}
