//! Aligned text tables and mean ± std summaries for experiment output.

/// Mean and population standard deviation. A single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "mean of an empty slice");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean ± std over the defined entries; `None` when every entry is
/// undefined.
pub fn mean_std_defined(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        None
    } else {
        Some(mean_std(&defined))
    }
}

/// `0.912 ± 0.004` at 3 decimals, for text tables.
pub fn fmt_pm((mean, std): (f64, f64)) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// [`fmt_pm`] or `NA`.
pub fn fmt_pm_opt(v: Option<(f64, f64)>) -> String {
    v.map(fmt_pm).unwrap_or_else(|| "NA".into())
}

/// Mean and std as two 6-decimal CSV fields, `NA,NA` when undefined.
pub fn csv_pm_opt(v: Option<(f64, f64)>) -> String {
    match v {
        Some((mean, std)) => format!("{mean:.6},{std:.6}"),
        None => "NA,NA".into(),
    }
}

/// Render an aligned monospace table: header row, a dash rule, one line per
/// row, columns padded to the widest cell and separated by two spaces.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        assert_eq!(row.len(), cols, "ragged table row");
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths.iter()).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            for _ in cell.chars().count()..*w {
                line.push(' ');
            }
        }
        line.trim_end().to_string()
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let mut out = fmt_row(&header_cells);
    out.push('\n');
    let rule_len = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}
