//! The results table: per objective, mean ± sample standard deviation of the
//! three test-split accuracies over seeds, plus a Mean column that averages
//! the three splits within each seed before aggregating. The best value in
//! each column is marked `*`, the second best `_`. A comma-separated twin
//! with full-precision values is written alongside the text table.

use super::runner::RunRecord;
use crate::loss::{LossKind, ALL_LOSS_KINDS};
use crate::{Error, Result};
use std::path::Path;

const COLUMNS: [&str; 4] = ["aligned", "conflicting", "mixed", "mean"];

/// Mean and sample standard deviation (n−1 denominator; 0 for a single
/// observation).
fn stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Row {
    loss: LossKind,
    cells: [(f64, f64); 4],
}

fn build_rows(records: &[RunRecord]) -> Result<Vec<Row>> {
    if records.is_empty() {
        return Err(Error::Argument("no run records to tabulate".into()));
    }
    let mut rows = Vec::new();
    for loss in ALL_LOSS_KINDS {
        let mut per_seed: Vec<&RunRecord> = records.iter().filter(|r| r.loss == loss).collect();
        if per_seed.is_empty() {
            continue;
        }
        per_seed.sort_by_key(|r| r.seed);
        let aligned: Vec<f64> = per_seed.iter().map(|r| r.acc_aligned).collect();
        let conflicting: Vec<f64> = per_seed.iter().map(|r| r.acc_conflicting).collect();
        let mixed: Vec<f64> = per_seed.iter().map(|r| r.acc_mixed).collect();
        let mean: Vec<f64> = per_seed
            .iter()
            .map(|r| (r.acc_aligned + r.acc_conflicting + r.acc_mixed) / 3.0)
            .collect();
        rows.push(Row {
            loss,
            cells: [stats(&aligned), stats(&conflicting), stats(&mixed), stats(&mean)],
        });
    }
    Ok(rows)
}

/// Per column: indices of the best and (when present) second-best row by
/// mean, scan order breaking ties.
fn markers(rows: &[Row], col: usize) -> (usize, Option<usize>) {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].cells[col].0.total_cmp(&rows[a].cells[col].0).then(a.cmp(&b)));
    (order[0], order.get(1).copied())
}

pub fn format_table(records: &[RunRecord]) -> Result<String> {
    let rows = build_rows(records)?;
    let mut marks = vec![[' '; 4]; rows.len()];
    for col in 0..4 {
        let (best, second) = markers(&rows, col);
        marks[best][col] = '*';
        if let Some(second) = second {
            marks[second][col] = '_';
        }
    }

    let mut out = String::new();
    out.push_str(&format!("{:<6}", "loss"));
    for name in COLUMNS {
        out.push_str(&format!("{name:<19}"));
    }
    out.push('\n');
    for (row, mark) in rows.iter().zip(&marks) {
        out.push_str(&format!("{:<6}", row.loss.name()));
        for (col, &(mean, std)) in row.cells.iter().enumerate() {
            out.push_str(&format!("{:<19}", format!("{}{mean:.4} ± {std:.4}", mark[col])));
        }
        // Trailing padding would vary with column count; keep lines trimmed.
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn format_csv(records: &[RunRecord]) -> Result<String> {
    let rows = build_rows(records)?;
    let mut out = String::from("loss");
    for name in COLUMNS {
        out.push_str(&format!(",{name}_mean,{name}_std"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(row.loss.name());
        for (mean, std) in row.cells {
            out.push_str(&format!(",{mean},{std}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes `results_table.txt` and `results_table.csv` under `out_dir` and
/// returns the text table.
pub fn emit_table(records: &[RunRecord], out_dir: impl AsRef<Path>) -> Result<String> {
    let out_dir = out_dir.as_ref();
    let text = format_table(records)?;
    let csv = format_csv(records)?;
    let txt_path = out_dir.join("results_table.txt");
    std::fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
    let csv_path = out_dir.join("results_table.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(text)
}
