//! Report tables over evaluation metrics: strict lower-bound filtering,
//! AUROC-descending sorts, per-row best-horizon marking, and markdown/CSV
//! rendering with the run's bootstrap settings echoed alongside.

use thiserror::Error;

use crate::cohort::TaskMode;
use crate::metrics::{LabelMetrics, MetricsReport};

/// A label makes a table only if its interval lower bound strictly exceeds
/// this; for monitoring, at any horizon.
pub const REPORT_LB_THRESHOLD: f64 = 0.70;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("expected a {expected:?} metrics report, got {found:?}")]
    WrongMode { expected: TaskMode, found: TaskMode },
    #[error("monitoring horizons are invalid: {detail}")]
    InconsistentHorizons { detail: String },
    #[error("metrics reports carry different label sets: {detail}")]
    MismatchedLabels { detail: String },
}

/// "0.882 (0.860, 0.902)" — three decimals, as in the tables.
fn format_cell(auroc: f64, ci_lo: f64, ci_hi: f64) -> String {
    format!("{auroc:.3} ({ci_lo:.3}, {ci_hi:.3})")
}

/// "NTproBNP [Ca.]" — display name with the category tag.
fn value_cell(label: &LabelMetrics) -> String {
    format!("{} [{}]", label.display_name, label.category.tag())
}

/// One retained estimation row, already filtered and ready to render.
#[derive(Debug, Clone)]
pub struct EstimationRow {
    pub label_id: String,
    pub value: String,
    pub threshold: String,
    pub auroc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// One retained monitoring row: per-horizon intervals in the given horizon
/// order, the sort key, and the index of the horizon to mark as best.
#[derive(Debug, Clone)]
pub struct MonitoringRow {
    pub label_id: String,
    pub value: String,
    pub threshold: String,
    pub cells: Vec<(f64, f64, f64)>,
    pub mean_auroc: f64,
    pub best: usize,
}

/// Estimation table rows: interval lower bound strictly above 0.70, sorted
/// by point AUROC descending (label id breaks exact ties).
pub fn estimation_rows(report: &MetricsReport) -> Result<Vec<EstimationRow>, ReportError> {
    if report.mode != TaskMode::Estimation {
        return Err(ReportError::WrongMode {
            expected: TaskMode::Estimation,
            found: report.mode,
        });
    }
    let mut rows: Vec<EstimationRow> = report
        .labels
        .iter()
        .filter(|m| m.ci_lo > REPORT_LB_THRESHOLD)
        .map(|m| EstimationRow {
            label_id: m.label_id.clone(),
            value: value_cell(m),
            threshold: m.threshold_display.clone(),
            auroc: m.auroc,
            ci_lo: m.ci_lo,
            ci_hi: m.ci_hi,
            n_pos: m.n_pos,
            n_neg: m.n_neg,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.auroc
            .total_cmp(&a.auroc)
            .then_with(|| a.label_id.cmp(&b.label_id))
    });
    Ok(rows)
}

/// Check that the per-horizon reports describe the same labels in the same
/// order and carry strictly increasing horizons.
fn check_monitoring_set(reports: &[MetricsReport]) -> Result<Vec<i64>, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::InconsistentHorizons {
            detail: "no horizons given".into(),
        });
    }
    let mut horizons = Vec::with_capacity(reports.len());
    for report in reports {
        if report.mode != TaskMode::Monitoring {
            return Err(ReportError::WrongMode {
                expected: TaskMode::Monitoring,
                found: report.mode,
            });
        }
        let h = report
            .horizon_s
            .ok_or_else(|| ReportError::InconsistentHorizons {
                detail: "monitoring report without a horizon".into(),
            })?;
        if let Some(&prev) = horizons.last() {
            if h <= prev {
                return Err(ReportError::InconsistentHorizons {
                    detail: format!("horizons must increase, got {prev}s then {h}s"),
                });
            }
        }
        horizons.push(h);
    }
    let first = &reports[0];
    for report in &reports[1..] {
        if report.labels.len() != first.labels.len() {
            return Err(ReportError::MismatchedLabels {
                detail: format!(
                    "{} labels at {}s vs {} at {}s",
                    first.labels.len(),
                    horizons[0],
                    report.labels.len(),
                    report.horizon_s.unwrap_or_default()
                ),
            });
        }
        for (a, b) in first.labels.iter().zip(&report.labels) {
            if a.label_id != b.label_id {
                return Err(ReportError::MismatchedLabels {
                    detail: format!("{:?} vs {:?} at the same position", a.label_id, b.label_id),
                });
            }
        }
    }
    Ok(horizons)
}

/// Monitoring table rows: retained if the lower bound strictly exceeds 0.70
/// at any horizon, sorted by mean point AUROC across horizons descending,
/// with the best horizon (first among exact ties) marked per row.
pub fn monitoring_rows(reports: &[MetricsReport]) -> Result<Vec<MonitoringRow>, ReportError> {
    check_monitoring_set(reports)?;
    let mut rows = Vec::new();
    for (ki, m) in reports[0].labels.iter().enumerate() {
        let cells: Vec<(f64, f64, f64)> = reports
            .iter()
            .map(|r| {
                let lm = &r.labels[ki];
                (lm.auroc, lm.ci_lo, lm.ci_hi)
            })
            .collect();
        if !cells.iter().any(|&(_, lo, _)| lo > REPORT_LB_THRESHOLD) {
            continue;
        }
        let mean_auroc = cells.iter().map(|c| c.0).sum::<f64>() / cells.len() as f64;
        let best = cells
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.0.total_cmp(&b.0).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one horizon");
        rows.push(MonitoringRow {
            label_id: m.label_id.clone(),
            value: value_cell(m),
            threshold: m.threshold_display.clone(),
            cells,
            mean_auroc,
            best,
        });
    }
    rows.sort_by(|a, b| {
        b.mean_auroc
            .total_cmp(&a.mean_auroc)
            .then_with(|| a.label_id.cmp(&b.label_id))
    });
    Ok(rows)
}

fn echo_lines(out: &mut String, report: &MetricsReport) {
    out.push_str(&format!("- records: {}\n", report.n_records));
    out.push_str(&format!(
        "- bootstrap: {} replicates, {:.0}% intervals, seed {}\n",
        report.n_bootstrap,
        report.ci_level * 100.0,
        report.seed
    ));
    out.push_str(&format!(
        "- macro AUROC: {}\n",
        format_cell(report.macro_auroc, report.macro_ci_lo, report.macro_ci_hi)
    ));
}

/// Markdown estimation table with the run settings echoed above it.
pub fn estimation_markdown(report: &MetricsReport) -> Result<String, ReportError> {
    let rows = estimation_rows(report)?;
    let mut out = String::new();
    out.push_str("# Abnormality estimation report\n\n");
    echo_lines(&mut out, report);
    out.push_str(
        "\nRows require an interval lower bound above 0.70; sorted by AUROC descending.\n\n",
    );
    out.push_str("| Value | Threshold | Estimation AUROC |\n");
    out.push_str("| --- | --- | --- |\n");
    for row in &rows {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            row.value,
            row.threshold,
            format_cell(row.auroc, row.ci_lo, row.ci_hi)
        ));
    }
    Ok(out)
}

/// Markdown monitoring table across horizons; the per-row best cell is bold.
pub fn monitoring_markdown(reports: &[MetricsReport]) -> Result<String, ReportError> {
    let horizons = check_monitoring_set(reports)?;
    let rows = monitoring_rows(reports)?;
    let mut out = String::new();
    out.push_str("# Abnormality monitoring report\n\n");
    for report in reports {
        let minutes = report.horizon_s.unwrap_or_default() / 60;
        out.push_str(&format!(
            "- horizon {minutes} min: {} records, macro AUROC {}\n",
            report.n_records,
            format_cell(report.macro_auroc, report.macro_ci_lo, report.macro_ci_hi)
        ));
    }
    out.push_str(&format!(
        "- bootstrap: {} replicates, {:.0}% intervals, seed {}\n",
        reports[0].n_bootstrap,
        reports[0].ci_level * 100.0,
        reports[0].seed
    ));
    out.push_str("\nRows require an interval lower bound above 0.70 at any horizon; sorted by mean AUROC descending; bold marks each row's best horizon.\n\n");
    out.push_str("| Value | Threshold |");
    for &h in &horizons {
        out.push_str(&format!(" {} min. AUROC |", h / 60));
    }
    out.push('\n');
    out.push_str("| --- | --- |");
    for _ in &horizons {
        out.push_str(" --- |");
    }
    out.push('\n');
    for row in &rows {
        out.push_str(&format!("| {} | {} |", row.value, row.threshold));
        for (i, &(auroc, lo, hi)) in row.cells.iter().enumerate() {
            let cell = format_cell(auroc, lo, hi);
            if i == row.best {
                out.push_str(&format!(" **{cell}** |"));
            } else {
                out.push_str(&format!(" {cell} |"));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// CSV mirror of the estimation table (same rows and order, three-decimal
/// cells split into columns) plus the run settings per row.
pub fn estimation_csv(report: &MetricsReport) -> Result<String, ReportError> {
    let rows = estimation_rows(report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label_id",
        "value",
        "threshold",
        "auroc",
        "ci_lo",
        "ci_hi",
        "n_pos",
        "n_neg",
        "n_bootstrap",
        "ci_level",
        "seed",
    ])
    .expect("csv row");
    for row in &rows {
        w.write_record([
            row.label_id.as_str(),
            row.value.as_str(),
            row.threshold.as_str(),
            &format!("{:.3}", row.auroc),
            &format!("{:.3}", row.ci_lo),
            &format!("{:.3}", row.ci_hi),
            &row.n_pos.to_string(),
            &row.n_neg.to_string(),
            &report.n_bootstrap.to_string(),
            &report.ci_level.to_string(),
            &report.seed.to_string(),
        ])
        .expect("csv row");
    }
    Ok(String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8"))
}

/// CSV mirror of the monitoring table: per-horizon interval columns named by
/// minutes, the mean sort key, and the best horizon per row.
pub fn monitoring_csv(reports: &[MetricsReport]) -> Result<String, ReportError> {
    let horizons = check_monitoring_set(reports)?;
    let rows = monitoring_rows(reports)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "label_id".to_string(),
        "value".to_string(),
        "threshold".to_string(),
    ];
    for &h in &horizons {
        let m = h / 60;
        header.push(format!("auroc_{m}m"));
        header.push(format!("ci_lo_{m}m"));
        header.push(format!("ci_hi_{m}m"));
    }
    header.push("mean_auroc".into());
    header.push("best_horizon_min".into());
    header.push("n_bootstrap".into());
    header.push("ci_level".into());
    header.push("seed".into());
    w.write_record(&header).expect("csv row");
    for row in &rows {
        let mut record = vec![row.label_id.clone(), row.value.clone(), row.threshold.clone()];
        for &(auroc, lo, hi) in &row.cells {
            record.push(format!("{auroc:.3}"));
            record.push(format!("{lo:.3}"));
            record.push(format!("{hi:.3}"));
        }
        record.push(format!("{:.3}", row.mean_auroc));
        record.push((horizons[row.best] / 60).to_string());
        record.push(reports[0].n_bootstrap.to_string());
        record.push(reports[0].ci_level.to_string());
        record.push(reports[0].seed.to_string());
        w.write_record(&record).expect("csv row");
    }
    Ok(String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8"))
}
