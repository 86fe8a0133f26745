//! Per-length comparison of LM accuracy across several reports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::svg::{axes, header, legend_entry, series, Frame};
use super::{PlotOptions, ReportBundle, ReportError};
use crate::analysis::stats::{anova_oneway, kruskal_wallis};
use crate::StatTestResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub grid_length: usize,
    pub anova: Option<StatTestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anova_error: Option<String>,
    pub kruskal_wallis: Option<StatTestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kruskal_wallis_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema: String,
    pub labels: Vec<String>,
    /// Samples compared at each length.
    pub sample: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// `(grid_length, ANOVA p)` for rows where the test is defined.
    pub fn anova_p_values(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.anova.as_ref().map(|t| (r.grid_length, t.p_value))).collect()
    }

    /// Plain-text p-value table.
    pub fn table(&self) -> String {
        let mut out = String::from("grid_length  anova_F      anova_p      kw_H         kw_p\n");
        let cell = |t: &Option<StatTestResult>| match t {
            Some(t) => format!("{:<12.6} {:<12.6}", t.statistic, t.p_value),
            None => format!("{:<12} {:<12}", "undefined", "-"),
        };
        for r in &self.rows {
            let _ = writeln!(out, "{:<12} {} {}", r.grid_length, cell(&r.anova), cell(&r.kruskal_wallis));
        }
        out
    }
}

/// Run one-way ANOVA and Kruskal-Wallis at every grid length, with one
/// group per report holding its per-repeat LM accuracies.
pub fn compare_report(labels: &[String], bundles: &[ReportBundle]) -> Result<Comparison, ReportError> {
    if bundles.len() < 2 {
        return Err(ReportError::TooFewReports(bundles.len()));
    }
    if labels.len() != bundles.len() {
        return Err(ReportError::Malformed(format!("{} labels for {} reports", labels.len(), bundles.len())));
    }
    let grid = bundles[0].curve.grid();
    for (label, b) in labels.iter().zip(bundles).skip(1) {
        if b.curve.grid() != grid {
            return Err(ReportError::GridMismatch(format!("{label} differs from {}", labels[0])));
        }
    }

    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &grid_length)| {
            let groups: Option<Vec<Vec<f64>>> = bundles
                .iter()
                .map(|b| b.curve.points[i].stats.as_ref().map(|s| s.lm_samples.clone()))
                .collect();
            let Some(groups) = groups else {
                let missing = Some("a report has no samples at this length".to_string());
                return ComparisonRow {
                    grid_length,
                    anova: None,
                    anova_error: missing.clone(),
                    kruskal_wallis: None,
                    kruskal_wallis_error: missing,
                };
            };
            let (anova, anova_error) = split(anova_oneway(&groups));
            let (kruskal_wallis, kruskal_wallis_error) = split(kruskal_wallis(&groups));
            ComparisonRow { grid_length, anova, anova_error, kruskal_wallis, kruskal_wallis_error }
        })
        .collect();

    Ok(Comparison {
        schema: "fc-compare-v1".into(),
        labels: labels.to_vec(),
        sample: "per-repeat LM accuracy".into(),
        rows,
    })
}

fn split<E: std::fmt::Display>(r: Result<StatTestResult, E>) -> (Option<StatTestResult>, Option<String>) {
    match r {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Overlay of every report's copy (solid) and LM (dashed) mean curves.
pub fn overlay_svg(labels: &[String], bundles: &[ReportBundle], options: &PlotOptions) -> Result<String, ReportError> {
    if bundles.is_empty() {
        return Err(ReportError::TooFewReports(0));
    }
    let x_max = bundles
        .iter()
        .flat_map(|b| b.curve.points.iter().map(|p| p.grid_length))
        .max()
        .unwrap_or(1) as f64;
    let f = Frame::new(options, x_max, 210.0);
    let colors = options.palette.colors_for_series();
    let mut svg = String::new();
    header(&mut svg, options);
    axes(&mut svg, &f);
    for (k, b) in bundles.iter().enumerate() {
        let color = colors[k % colors.len()];
        let pick = |copy: bool| {
            move |p: &crate::evaluator::CurvePoint| {
                let s = p.stats.as_ref().expect("segments hold valid points");
                if copy {
                    (s.copy_mean, s.copy_std)
                } else {
                    (s.lm_mean, s.lm_std)
                }
            }
        };
        series(&mut svg, &f, &b.curve.points, &format!("copy-{k}"), color, false, false, pick(true));
        series(&mut svg, &f, &b.curve.points, &format!("lm-{k}"), color, true, false, pick(false));
    }
    let lx = f.left + f.plot_w + 20.0;
    let mut ly = f.top + 12.0;
    let _ = writeln!(svg, r#"<g id="legend">"#);
    for (k, label) in labels.iter().enumerate() {
        let color = colors[k % colors.len()];
        legend_entry(&mut svg, lx, ly, color, &format!("{label} copy"), "line");
        ly += 18.0;
        legend_entry(&mut svg, lx, ly, color, &format!("{label} LM"), "dash");
        ly += 24.0;
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
