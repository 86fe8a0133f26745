//! Fine- and coarse-grained memory length extraction.
//!
//! Both lengths use the same run rule over the ordered grid: start at the
//! first point satisfying the predicate (earlier violations are forgiven,
//! since very short sequences are unreliable), then extend while the
//! predicate keeps holding. The reported length is the last grid length of
//! that run, or 0 when nothing satisfies the predicate. Thresholds are
//! inclusive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::ForgettingCurve;

pub const DEFAULT_FINE_ACC: f64 = 0.99;
pub const DEFAULT_COARSE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("curve has no points")]
    Empty,
    #[error("indeterminate {criterion} length: grid point {grid_length} failed")]
    Indeterminate { criterion: &'static str, grid_length: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub fine_acc: f64,
    pub coarse_margin: f64,
    /// Always true: `copy ≥ fine_acc` and `copy − lm ≥ coarse_margin`.
    pub inclusive: bool,
    /// Report the linearly interpolated crossing instead of the grid length.
    pub interpolate: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            fine_acc: DEFAULT_FINE_ACC,
            coarse_margin: DEFAULT_COARSE_MARGIN,
            inclusive: true,
            interpolate: false,
        }
    }
}

/// Extracted length for one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthEstimate {
    pub length: usize,
    pub censored: bool,
}

impl LengthEstimate {
    /// `">4096"` when censored, `"4096"` otherwise.
    pub fn display(&self) -> String {
        if self.censored {
            format!(">{}", self.length)
        } else {
            self.length.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLengths {
    pub fine: usize,
    pub fine_censored: bool,
    pub fine_display: String,
    pub coarse: usize,
    pub coarse_censored: bool,
    pub coarse_display: String,
    pub thresholds: Thresholds,
    pub warnings: Vec<String>,
}

impl MemoryLengths {
    pub fn fine_estimate(&self) -> LengthEstimate {
        LengthEstimate { length: self.fine, censored: self.fine_censored }
    }

    pub fn coarse_estimate(&self) -> LengthEstimate {
        LengthEstimate { length: self.coarse, censored: self.coarse_censored }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Run {
    start: usize,
    end: usize,
    censored: bool,
}

/// Apply the run rule to per-point metric values (`None` marks a failed
/// point) against an inclusive threshold.
fn find_run(
    criterion: &'static str,
    lengths: &[usize],
    metric: &[Option<f64>],
    threshold: f64,
) -> Result<Option<Run>, ExtractionError> {
    if metric.is_empty() {
        return Err(ExtractionError::Empty);
    }
    let mut start = None;
    for (i, m) in metric.iter().enumerate() {
        match (m, start) {
            (None, _) => {
                return Err(ExtractionError::Indeterminate { criterion, grid_length: lengths[i] })
            }
            (Some(v), None) if *v >= threshold => start = Some(i),
            (Some(v), Some(s)) if *v < threshold => {
                return Ok(Some(Run { start: s, end: i - 1, censored: false }))
            }
            _ => {}
        }
    }
    Ok(start.map(|s| Run { start: s, end: metric.len() - 1, censored: true }))
}

fn estimate(
    lengths: &[usize],
    metric: &[Option<f64>],
    threshold: f64,
    run: Option<&Run>,
    interpolate: bool,
) -> LengthEstimate {
    let Some(run) = run else {
        return LengthEstimate { length: 0, censored: false };
    };
    let mut length = lengths[run.end];
    if interpolate && !run.censored {
        let (l0, l1) = (lengths[run.end] as f64, lengths[run.end + 1] as f64);
        let (m0, m1) = (
            metric[run.end].expect("run points are present"),
            metric[run.end + 1].expect("run terminator is present"),
        );
        if m0 > m1 {
            let t = (m0 - threshold) / (m0 - m1);
            length = (l0 + t * (l1 - l0)).round() as usize;
        }
    }
    LengthEstimate { length, censored: run.censored }
}

fn run_warnings(
    name: &str,
    lengths: &[usize],
    metric: &[Option<f64>],
    threshold: f64,
    run: Option<&Run>,
    out: &mut Vec<String>,
) {
    let Some(run) = run else { return };
    if run.start > 0 {
        out.push(format!(
            "{name}: {} leading point(s) below threshold ignored (first satisfying length {})",
            run.start, lengths[run.start]
        ));
    }
    if let Some(i) = (run.end + 1..metric.len()).find(|&i| metric[i].is_some_and(|v| v >= threshold)) {
        out.push(format!(
            "{name}: criterion holds again at length {} after the run ended at {}",
            lengths[i], lengths[run.end]
        ));
    }
}

fn series(curve: &ForgettingCurve) -> (Vec<usize>, Vec<Option<f64>>, Vec<Option<f64>>) {
    let lengths = curve.points.iter().map(|p| p.grid_length).collect();
    let copy = curve.points.iter().map(|p| p.stats.as_ref().map(|s| s.copy_mean)).collect();
    let diff = curve
        .points
        .iter()
        .map(|p| p.stats.as_ref().map(|s| s.copy_mean - s.lm_mean))
        .collect();
    (lengths, copy, diff)
}

/// Largest grid length of the run where copy accuracy is at least `threshold`.
pub fn fine_length(curve: &ForgettingCurve, threshold: f64) -> Result<LengthEstimate, ExtractionError> {
    let (lengths, copy, _) = series(curve);
    let run = find_run("fine", &lengths, &copy, threshold)?;
    Ok(estimate(&lengths, &copy, threshold, run.as_ref(), false))
}

/// Largest grid length of the run where copy accuracy beats LM accuracy by
/// at least `margin`.
pub fn coarse_length(curve: &ForgettingCurve, margin: f64) -> Result<LengthEstimate, ExtractionError> {
    let (lengths, _, diff) = series(curve);
    let run = find_run("coarse", &lengths, &diff, margin)?;
    Ok(estimate(&lengths, &diff, margin, run.as_ref(), false))
}

/// Extract both lengths with warnings for dips, forgiven leading points and
/// `fine > coarse`.
pub fn extract(curve: &ForgettingCurve, thresholds: &Thresholds) -> Result<MemoryLengths, ExtractionError> {
    let (lengths, copy, diff) = series(curve);
    let fine_run = find_run("fine", &lengths, &copy, thresholds.fine_acc)?;
    let coarse_run = find_run("coarse", &lengths, &diff, thresholds.coarse_margin)?;
    let fine = estimate(&lengths, &copy, thresholds.fine_acc, fine_run.as_ref(), thresholds.interpolate);
    let coarse = estimate(
        &lengths,
        &diff,
        thresholds.coarse_margin,
        coarse_run.as_ref(),
        thresholds.interpolate,
    );

    let mut warnings = Vec::new();
    run_warnings("fine", &lengths, &copy, thresholds.fine_acc, fine_run.as_ref(), &mut warnings);
    run_warnings("coarse", &lengths, &diff, thresholds.coarse_margin, coarse_run.as_ref(), &mut warnings);
    if fine.length > coarse.length {
        warnings.push(format!(
            "fine length {} exceeds coarse length {}",
            fine.length, coarse.length
        ));
    }

    Ok(MemoryLengths {
        fine: fine.length,
        fine_censored: fine.censored,
        fine_display: fine.display(),
        coarse: coarse.length,
        coarse_censored: coarse.censored,
        coarse_display: coarse.display(),
        thresholds: *thresholds,
        warnings,
    })
}
