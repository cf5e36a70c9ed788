//! Result tables.
//!
//! `PerCategoryRows`: one row per (variant, category) with the metric columns.
//! `VariantColumns`: one row per (category, metric) with one column per variant.
//! Failed experiments are left out; the markdown form lists them below the
//! table.

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, HarnessError, RunStatus};
use crate::metrics::{MetricsReport, AUC_COLUMN, TABLE_COLUMNS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    PerCategoryRows,
    VariantColumns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

fn fmt(v: f64, format: TableFormat) -> String {
    match format {
        // Shortest representation that parses back to the same value.
        TableFormat::Csv => format!("{v}"),
        TableFormat::Markdown => format!("{v:.4}"),
    }
}

fn metric_values(r: &MetricsReport, with_auc: bool) -> Vec<Option<f64>> {
    let mut v: Vec<Option<f64>> = r.table_values().iter().map(|&x| Some(x)).collect();
    if with_auc {
        v.push(r.auc);
    }
    v
}

fn render(header: Vec<String>, rows: Vec<Vec<String>>, format: TableFormat, notes: &[String]) -> String {
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for r in &rows {
                w.write_record(r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        TableFormat::Markdown => {
            let mut s = format!("| {} |\n", header.join(" | "));
            s.push_str(&format!("|{}\n", header.iter().map(|_| "---|").collect::<String>()));
            for r in &rows {
                s.push_str(&format!("| {} |\n", r.join(" | ")));
            }
            for n in notes {
                s.push_str(&format!("\n{n}\n"));
            }
            s
        }
    }
}

pub fn emit_table(
    results: &[ExperimentResult],
    layout: TableLayout,
    format: TableFormat,
) -> Result<String, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Table("no results".into()));
    }
    let ok: Vec<&ExperimentResult> = results.iter().filter(|r| r.succeeded()).collect();
    let notes: Vec<String> = results
        .iter()
        .filter_map(|r| match &r.status {
            RunStatus::Failed { stage, reason } => Some(format!("`{}` failed ({stage}): {reason}", r.name)),
            RunStatus::Succeeded => None,
        })
        .collect();
    if ok.is_empty() {
        return Err(HarnessError::Table("every experiment failed".into()));
    }
    if ok.iter().any(|r| r.scheme != ok[0].scheme) {
        return Err(HarnessError::Table("results use different aggregation schemes".into()));
    }
    let with_auc = ok
        .iter()
        .flat_map(|r| &r.categories)
        .any(|c| c.report.auc.is_some());
    let mut metric_names: Vec<String> = TABLE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if with_auc {
        metric_names.push(AUC_COLUMN.into());
    }
    let cell = |v: Option<f64>| v.map(|x| fmt(x, format)).unwrap_or_default();

    match layout {
        TableLayout::PerCategoryRows => {
            let mut header = vec!["Variant".to_string(), "Category".to_string()];
            header.extend(metric_names);
            let mut rows = Vec::new();
            for r in &ok {
                for c in &r.categories {
                    let mut row = vec![r.name.clone(), c.category.clone()];
                    row.extend(metric_values(&c.report, with_auc).into_iter().map(cell));
                    rows.push(row);
                }
            }
            Ok(render(header, rows, format, &notes))
        }
        TableLayout::VariantColumns => {
            let mut categories: Vec<String> = Vec::new();
            for c in ok.iter().flat_map(|r| &r.categories) {
                if !categories.contains(&c.category) {
                    categories.push(c.category.clone());
                }
            }
            let mut header = vec!["Category".to_string(), "Metric".to_string()];
            header.extend(ok.iter().map(|r| r.name.clone()));
            let mut rows = Vec::new();
            for cat in &categories {
                let per_variant: Vec<Option<Vec<Option<f64>>>> = ok
                    .iter()
                    .map(|r| {
                        r.categories
                            .iter()
                            .find(|c| &c.category == cat)
                            .map(|c| metric_values(&c.report, with_auc))
                    })
                    .collect();
                for (m, name) in metric_names.iter().enumerate() {
                    let mut row = vec![cat.clone(), name.clone()];
                    row.extend(per_variant.iter().map(|v| cell(v.as_ref().and_then(|v| v[m]))));
                    rows.push(row);
                }
            }
            Ok(render(header, rows, format, &notes))
        }
    }
}
