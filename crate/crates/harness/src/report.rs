//! Aggregate predictions and emit the report files: an aligned-text table
//! (metric blocks × method × group, plus a sentence-ordering table when
//! two or more orderings were run), a flat CSV, and a JSON summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use convqa_core::metrics::{EvalReport, MetricScores, ReportRow};
use convqa_core::subsets::{Group, Method, Ordering};

pub use convqa_core::metrics::{aggregate, AggregateError, AggregationUnit};

type MetricFn = fn(&MetricScores) -> f64;

const METRICS: [(&str, MetricFn); 4] = [
    ("ExactMatch", |m| m.em),
    ("Precision", |m| m.precision),
    ("Recall", |m| m.recall),
    ("F1", |m| m.f1),
];

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn orderings_in(report: &EvalReport) -> Vec<Ordering> {
    let set: BTreeSet<Ordering> = report.rows.iter().map(|r| r.key.ordering).collect();
    set.into_iter().collect()
}

pub fn methods_in(report: &EvalReport) -> Vec<Method> {
    let set: BTreeSet<Method> = report.rows.iter().map(|r| r.key.method).collect();
    set.into_iter().collect()
}

pub fn models_in(report: &EvalReport) -> Vec<String> {
    let set: BTreeSet<String> = report.rows.iter().map(|r| r.key.model.clone()).collect();
    set.into_iter().collect()
}

/// Flat CSV: one row per report cell, percentages to two decimals.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("method,group,ordering,model,count,exact_match,precision,recall,f1\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.key.method,
            row.key.group,
            row.key.ordering,
            row.key.model,
            row.count,
            percent(row.mean.em),
            percent(row.mean.precision),
            percent(row.mean.recall),
            percent(row.mean.f1),
        );
    }
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a Method,
    group: &'a Group,
    ordering: &'a Ordering,
    model: &'a str,
    count: usize,
    exact_match: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

/// Machine-readable summary; percentages at full precision.
pub fn render_json(report: &EvalReport) -> String {
    let rows: Vec<JsonRow> = report
        .rows
        .iter()
        .map(|row| JsonRow {
            method: &row.key.method,
            group: &row.key.group,
            ordering: &row.key.ordering,
            model: &row.key.model,
            count: row.count,
            exact_match: row.mean.em * 100.0,
            precision: row.mean.precision * 100.0,
            recall: row.mean.recall * 100.0,
            f1: row.mean.f1 * 100.0,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))
        .expect("report serializes");
    text.push('\n');
    text
}

fn find<'a>(
    report: &'a EvalReport,
    method: Method,
    group: Group,
    ordering: Ordering,
    model: &str,
) -> Option<&'a ReportRow> {
    report.find(method, group, ordering, model)
}

fn table(
    title: &str,
    label_rows: &[(String, Vec<Option<f64>>)],
    headings: &[(usize, String)],
    models: &[String],
) -> String {
    let label_width = label_rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(headings.iter().map(|(_, h)| h.len()))
        .chain([title.len(), 14])
        .max()
        .unwrap_or(14)
        + 2;
    let col_widths: Vec<usize> = models.iter().map(|m| m.len().max(8) + 2).collect();

    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<label_width$}", "Method / Group");
    for (model, w) in models.iter().zip(&col_widths) {
        let _ = write!(out, "{model:>w$}");
    }
    out.push('\n');
    let total: usize = label_width + col_widths.iter().sum::<usize>();
    out.push_str(&"-".repeat(total));
    out.push('\n');

    let mut heading_iter = headings.iter().peekable();
    for (i, (label, cells)) in label_rows.iter().enumerate() {
        while let Some((at, text)) = heading_iter.peek() {
            if *at == i {
                let _ = writeln!(out, "{text}");
                heading_iter.next();
            } else {
                break;
            }
        }
        let _ = write!(out, "{label:<label_width$}");
        for (cell, w) in cells.iter().zip(&col_widths) {
            match cell {
                Some(v) => {
                    let formatted = percent(*v);
                    let _ = write!(out, "{formatted:>w$}");
                }
                None => {
                    let _ = write!(out, "{:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// The aligned-text report.
pub fn render_text(report: &EvalReport) -> String {
    let models = models_in(report);
    let methods = methods_in(report);
    let orderings = orderings_in(report);
    let mut out = String::new();

    for (metric_name, metric_fn) in METRICS {
        let mut label_rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
        let mut headings: Vec<(usize, String)> = Vec::new();
        for &method in &methods {
            headings.push((label_rows.len(), format!("{method}")));
            for group in [Group::High, Group::Low] {
                for &ordering in &orderings {
                    let label = if orderings.len() == 1 {
                        format!("  {group}")
                    } else {
                        format!("  {group} ({ordering})")
                    };
                    let cells: Vec<Option<f64>> = models
                        .iter()
                        .map(|m| {
                            find(report, method, group, ordering, m)
                                .map(|row| metric_fn(&row.mean))
                        })
                        .collect();
                    label_rows.push((label, cells));
                }
            }
        }
        out.push_str(&table(metric_name, &label_rows, &headings, &models));
        out.push('\n');
    }

    // Sentence-ordering comparison, shaped like the two-ordering ExactMatch
    // table: only meaningful when at least two orderings were run.
    if orderings.len() >= 2 {
        for &method in &methods {
            let mut label_rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
            let mut headings: Vec<(usize, String)> = Vec::new();
            for group in [Group::High, Group::Low] {
                headings.push((label_rows.len(), format!("{group}")));
                for &ordering in &orderings {
                    if ordering == Ordering::Canonical {
                        continue;
                    }
                    let cells: Vec<Option<f64>> = models
                        .iter()
                        .map(|m| find(report, method, group, ordering, m).map(|r| r.mean.em))
                        .collect();
                    label_rows.push((format!("  {ordering}"), cells));
                }
            }
            out.push_str(&table(
                &format!("ExactMatch by sentence ordering: {method}"),
                &label_rows,
                &headings,
                &models,
            ));
            out.push('\n');
        }
    }
    out
}

/// Warn about grid positions with no predictions (cells are omitted, not
/// zero-filled).
pub fn warn_empty_cells(report: &EvalReport) {
    let models = models_in(report);
    let methods = methods_in(report);
    let orderings = orderings_in(report);
    for &method in &methods {
        for group in [Group::High, Group::Low] {
            for &ordering in &orderings {
                for model in &models {
                    if find(report, method, group, ordering, model).is_none() {
                        log::warn!(
                            "no predictions for ({method}, {group}, {ordering}, {model}); cell omitted"
                        );
                    }
                }
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write report `{path}`: {source}")]
pub struct ReportWriteError {
    path: String,
    #[source]
    source: std::io::Error,
}

/// Write report.txt, report.csv, and report.json into `out_dir`.
pub fn write_reports(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<(), ReportWriteError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| ReportWriteError {
        path: out_dir.display().to_string(),
        source,
    })?;
    for (name, contents) in [
        ("report.txt", render_text(report)),
        ("report.csv", render_csv(report)),
        ("report.json", render_json(report)),
    ] {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|source| ReportWriteError {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
