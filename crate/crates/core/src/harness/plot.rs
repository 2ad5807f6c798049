//! Aggregation of per-seed metrics CSVs into plot-ready curves.

use std::path::Path;

use super::HarnessError;
use crate::trainer::mean_std;

/// Trailing moving average; the first `window - 1` points average what is
/// available. A window of 1 is the identity.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| HarnessError::Csv(format!("{}: non-numeric cell {c:?}", path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Smooth each metric column of every CSV with a `window`-wide moving
/// average, then emit `epoch,<col>_mean,<col>_std,...` across files.
/// Files must share a header; runs of different length are truncated to
/// the common prefix.
pub fn plot_data(paths: &[&Path], window: usize) -> Result<String, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Csv("plot-data needs at least one CSV".into()));
    }
    let tables = paths.iter().map(|p| read_table(p)).collect::<Result<Vec<_>, _>>()?;
    let header = &tables[0].header;
    if header.first().map(String::as_str) != Some("epoch") {
        return Err(HarnessError::Csv("first column must be `epoch`".into()));
    }
    for (t, p) in tables.iter().zip(paths).skip(1) {
        if &t.header != header {
            return Err(HarnessError::Csv(format!("{}: columns differ from {}", p.display(), paths[0].display())));
        }
    }
    let len = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    if tables.iter().any(|t| t.rows.len() != len) {
        log::warn!("runs have different lengths; truncating to the first {len} epochs");
    }
    let cols = header.len();
    // smoothed[table][col][epoch]
    let smoothed: Vec<Vec<Vec<f64>>> = tables
        .iter()
        .map(|t| {
            (1..cols)
                .map(|c| {
                    let series: Vec<f64> = t.rows[..len].iter().map(|r| r[c]).collect();
                    moving_average(&series, window)
                })
                .collect()
        })
        .collect();

    let mut out = String::from("epoch");
    for name in &header[1..] {
        out.push_str(&format!(",{name}_mean,{name}_std"));
    }
    out.push('\n');
    for e in 0..len {
        out.push_str(&tables[0].rows[e][0].to_string());
        for c in 0..cols - 1 {
            let xs: Vec<f64> = smoothed.iter().map(|s| s[c][e]).collect();
            let (m, s) = mean_std(&xs);
            out.push_str(&format!(",{m},{s}"));
        }
        out.push('\n');
    }
    Ok(out)
}
