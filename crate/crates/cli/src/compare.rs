use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use emargin_core::eval::EvalReport;

use crate::CliError;

type Column = (&'static str, fn(&EvalReport) -> f64);

const COLUMNS: [Column; 10] = [
    ("DBI", |r| r.dbi),
    ("Silhouette", |r| r.silhouette),
    ("Accuracy", |r| r.accuracy),
    ("F1 (macro)", |r| r.f1_macro),
    ("F1 (weighted)", |r| r.f1_weighted),
    ("Precision (macro)", |r| r.precision_macro),
    ("Precision (weighted)", |r| r.precision_weighted),
    ("Recall (macro)", |r| r.recall_macro),
    ("Recall (weighted)", |r| r.recall_weighted),
    ("k", |r| r.k as f64),
];

/// Mean and sample standard deviation. A single value has deviation 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn format_cell(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.2}±{s:.2}")
}

type GroupKey = (String, String);

/// One markdown table per dataset, one row per (method, assignment), cells
/// are mean±std over seeds.
pub fn compare(reports: &[EvalReport]) -> Result<String, CliError> {
    if reports.is_empty() {
        return Err(CliError::usage("compare needs at least one report"));
    }
    let mut datasets: BTreeMap<&str, BTreeMap<GroupKey, Vec<&EvalReport>>> = BTreeMap::new();
    for r in reports {
        datasets
            .entry(r.dataset.as_str())
            .or_default()
            .entry((r.loss_kind.clone(), r.assignment.to_string()))
            .or_default()
            .push(r);
    }

    let mut out = String::new();
    for (dataset, groups) in &datasets {
        writeln!(out, "## {dataset}\n").unwrap();
        write!(out, "| method | assignment | seeds |").unwrap();
        for (name, _) in COLUMNS {
            write!(out, " {name} |").unwrap();
        }
        out.push('\n');
        out.push_str(&"|---".repeat(3 + COLUMNS.len()));
        out.push_str("|\n");
        for ((method, assignment), rows) in groups {
            check_group(dataset, method, rows)?;
            let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
            write!(out, "| {method} | {assignment} | {} |", seeds.join(",")).unwrap();
            for (_, get) in COLUMNS {
                let values: Vec<f64> = rows.iter().map(|r| get(r)).collect();
                write!(out, " {} |", format_cell(&values)).unwrap();
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("Cells are mean±std over seeds; std is the sample (n-1) deviation, 0.00 for a single seed.\n");
    Ok(out)
}

fn check_group(dataset: &str, method: &str, rows: &[&EvalReport]) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert(r.seed) {
            return Err(CliError::data(format!("{dataset}/{method}: seed {} reported twice", r.seed)));
        }
        if r.k != rows[0].k {
            return Err(CliError::data(format!(
                "{dataset}/{method}: inconsistent cluster counts {} and {}",
                rows[0].k, r.k
            )));
        }
    }
    Ok(())
}
