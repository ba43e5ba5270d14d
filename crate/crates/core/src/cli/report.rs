use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::distill::{LossWeights, SelectionMode};
use crate::train::{read_records, MetricsRecord};

use super::CliError;

/// Run label derived from the ablation toggles when none is given; these
/// match the loss-component keys in the metrics stream.
pub fn label_for(weights: &LossWeights) -> String {
    let no_kd = weights.lambda_mwd == 0.0
        && weights.lambda_tr2d == 0.0
        && weights.lambda_magd == 0.0
        && weights.lambda_dual_ld == 0.0;
    if no_kd {
        "no_kd".to_string()
    } else if !weights.mwcd_enabled {
        "wo_mwcd".to_string()
    } else if weights.lambda_tr2d == 0.0 {
        "wo_tr2d".to_string()
    } else if weights.lambda_magd == 0.0 {
        "wo_magd".to_string()
    } else if !weights.hrchy_ld_enabled {
        "wo_hrchy_ld".to_string()
    } else if weights.tr2d_mode == SelectionMode::All {
        "tr2d_all".to_string()
    } else {
        "full".to_string()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportCell {
    pub label: String,
    pub spec: Option<[f64; 3]>,
    pub top10: f64,
    pub top20: f64,
}

/// One run's contribution to the grid: its meta record names the run, its
/// final test record carries the accuracies.
fn extract_cell(path: &std::path::Path, records: &[MetricsRecord]) -> Result<ReportCell, CliError> {
    let meta = records.iter().find(|r| r.split == "meta");
    let label = meta
        .and_then(|m| m.label.clone())
        .unwrap_or_else(|| path.display().to_string());
    let spec = meta.and_then(|m| m.spec);
    let test = records
        .iter()
        .rev()
        .find(|r| r.split == "test" && r.top10.is_some() && r.top20.is_some())
        .ok_or_else(|| CliError::Report(format!(
            "{} has no test record; run evaluate or distill first",
            path.display()
        )))?;
    Ok(ReportCell {
        label,
        spec,
        top10: test.top10.unwrap(),
        top20: test.top20.unwrap(),
    })
}

/// Aggregate metrics logs into a label x spec grid of top-10/top-20 cells.
pub fn build_report(paths: &[PathBuf]) -> Result<Vec<ReportCell>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Report("no metrics logs given".into()));
    }
    let mut cells = Vec::new();
    for path in paths {
        let records = read_records(path).map_err(|e| CliError::Report(format!(
            "{}: {e}",
            path.display()
        )))?;
        cells.push(extract_cell(path, &records)?);
    }
    Ok(cells)
}

fn spec_key(spec: &Option<[f64; 3]>) -> String {
    match spec {
        None => "(complete)".to_string(),
        Some([d, n, c]) => format!("({d}, {n}, {c})"),
    }
}

/// Plain-text grid: one row per label, top-10/top-20 columns per spec.
pub fn render_text(cells: &[ReportCell]) -> String {
    let mut specs: Vec<String> = cells.iter().map(|c| spec_key(&c.spec)).collect();
    specs.sort();
    specs.dedup();
    let mut labels: Vec<String> = cells.iter().map(|c| c.label.clone()).collect();
    labels.dedup();

    let mut grid: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for c in cells {
        grid.insert((c.label.clone(), spec_key(&c.spec)), (c.top10, c.top20));
    }

    let label_w = labels.iter().map(String::len).max().unwrap_or(5).max(5);
    let mut out = String::new();
    out.push_str(&format!("{:label_w$}", "run"));
    for s in &specs {
        out.push_str(&format!("  {:>10} {:>10}", format!("{s}"), ""));
    }
    out.push('\n');
    out.push_str(&format!("{:label_w$}", ""));
    for _ in &specs {
        out.push_str(&format!("  {:>10} {:>10}", "top-10", "top-20"));
    }
    out.push('\n');
    for label in &labels {
        out.push_str(&format!("{label:label_w$}"));
        for s in &specs {
            match grid.get(&(label.clone(), s.clone())) {
                Some((t10, t20)) => {
                    out.push_str(&format!("  {:>10.4} {:>10.4}", t10, t20));
                }
                None => out.push_str(&format!("  {:>10} {:>10}", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_json(cells: &[ReportCell]) -> Result<String, CliError> {
    serde_json::to_string_pretty(cells).map_err(|e| CliError::Report(e.to_string()))
}
