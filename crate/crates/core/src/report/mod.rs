//! Report serialization: canonical JSON (`fc-report-v1`), CSV and SVG.

pub mod compare;
pub mod svg;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::memory::{ExtractionError, MemoryLengths, Thresholds};
use crate::evaluator::ForgettingCurve;
use crate::seed::fingerprint_hex;
use crate::StatTestResult;

pub use compare::{compare_report, Comparison};
pub use svg::{plot_svg, Palette, PlotOptions};

pub const REPORT_SCHEMA: &str = "fc-report-v1";
/// Significant digits kept for every float in JSON and CSV output.
pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot plot a curve with {0} valid point(s); need at least 2")]
    DegenerateCurve(usize),
    #[error("need at least 2 reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("reports do not share a grid: {0}")]
    GridMismatch(String),
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("report config hash {stored} does not match its curve ({computed})")]
    HashMismatch { stored: String, computed: String },
}

/// Memory-length analysis, or the reason it could not be made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Analysis {
    Ok(MemoryLengths),
    Indeterminate { reason: String, thresholds: Thresholds },
}

impl Analysis {
    pub fn from_curve(curve: &ForgettingCurve, thresholds: &Thresholds) -> Self {
        match crate::analysis::memory::extract(curve, thresholds) {
            Ok(m) => Analysis::Ok(m),
            Err(e @ (ExtractionError::Indeterminate { .. } | ExtractionError::Empty)) => {
                Analysis::Indeterminate { reason: e.to_string(), thresholds: *thresholds }
            }
        }
    }

    pub fn lengths(&self) -> Option<&MemoryLengths> {
        match self {
            Analysis::Ok(m) => Some(m),
            Analysis::Indeterminate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: String,
    pub created_with: String,
    pub config_hash: String,
    pub curve: ForgettingCurve,
    pub analysis: Analysis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat_tests: Option<Vec<StatTestResult>>,
    #[serde(default)]
    pub notes: String,
}

/// Hash of the sweep identity (backend descriptor and sweep config).
pub fn config_hash(curve: &ForgettingCurve) -> String {
    let identity = serde_json::json!({ "backend": curve.backend_info, "config": curve.config });
    fingerprint_hex(identity.to_string().as_bytes())
}

impl ReportBundle {
    pub fn new(curve: ForgettingCurve, thresholds: &Thresholds) -> Self {
        let analysis = Analysis::from_curve(&curve, thresholds);
        ReportBundle {
            schema: REPORT_SCHEMA.into(),
            created_with: crate::TOOL_VERSION.into(),
            config_hash: config_hash(&curve),
            curve,
            analysis,
            stat_tests: None,
            notes: String::new(),
        }
    }

    /// Re-run extraction with new thresholds.
    pub fn reanalyze(&mut self, thresholds: &Thresholds) {
        self.analysis = Analysis::from_curve(&self.curve, thresholds);
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.schema != REPORT_SCHEMA {
            return Err(ReportError::Malformed(format!("unknown schema {:?}", self.schema)));
        }
        let computed = config_hash(&self.curve);
        if computed != self.config_hash {
            return Err(ReportError::HashMismatch { stored: self.config_hash.clone(), computed });
        }
        Ok(())
    }
}

/// Round to `digits` significant digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().expect("formatted float parses")
}

fn canonicalize(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            if let Some(r) = serde_json::Number::from_f64(round_significant(x, SIGNIFICANT_DIGITS)) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(canonicalize),
        Value::Object(map) => map.values_mut().for_each(canonicalize),
        _ => {}
    }
}

/// Canonical JSON: sorted keys, floats at nine significant digits,
/// two-space indentation, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    canonicalize(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn to_json(bundle: &ReportBundle) -> String {
    canonical_json(bundle)
}

pub fn from_json(text: &str) -> Result<ReportBundle, ReportError> {
    let bundle: ReportBundle = serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}

fn csv_float(x: f64) -> String {
    round_significant(x, SIGNIFICANT_DIGITS).to_string()
}

/// One row per grid point; failed points and absent perplexities leave
/// empty cells.
pub fn to_csv(curve: &ForgettingCurve) -> String {
    let mut out = String::from("grid_length,copy_mean,copy_std,lm_mean,lm_std,lm_ppl\n");
    for p in &curve.points {
        let cells = match &p.stats {
            Some(s) => [
                csv_float(s.copy_mean),
                csv_float(s.copy_std),
                csv_float(s.lm_mean),
                csv_float(s.lm_std),
                s.lm_perplexity.map(csv_float).unwrap_or_default(),
            ],
            None => Default::default(),
        };
        out.push_str(&p.grid_length.to_string());
        for c in cells {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::testing::curve_from_means;
    use crate::evaluator::PointStatus;

    #[test]
    fn json_is_deterministic_and_round_trips() {
        let c = curve_from_means(&[100, 200, 300], &[1.0, 0.123456789123, 0.3], &[0.3, 0.3, 0.3]);
        let b = ReportBundle::new(c, &Thresholds::default());
        let a = to_json(&b);
        assert_eq!(a, to_json(&b));
        assert!(a.contains("0.123456789"));
        assert!(!a.contains("0.1234567891"));
        let back = from_json(&a).unwrap();
        assert_eq!(back.analysis, b.analysis);
        assert_eq!(to_json(&back), a);
    }

    #[test]
    fn censored_lengths_render_with_marker() {
        let c = curve_from_means(&[100, 200], &[1.0, 1.0], &[0.3, 0.3]);
        let json = to_json(&ReportBundle::new(c, &Thresholds::default()));
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["analysis"]["coarse_censored"], Value::Bool(true));
        assert_eq!(v["analysis"]["coarse_display"], ">200");
        assert_eq!(v["analysis"]["status"], "ok");
    }

    #[test]
    fn failed_point_is_marked() {
        let mut c = curve_from_means(&[100, 200], &[1.0, 1.0], &[0.3, 0.3]);
        c.points[1].status = PointStatus::Failed;
        c.points[1].error = Some("oom".into());
        c.points[1].stats = None;
        let json = to_json(&ReportBundle::new(c.clone(), &Thresholds::default()));
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["curve"]["points"][1]["status"], "failed");
        assert_eq!(v["analysis"]["status"], "indeterminate");
        assert_eq!(to_csv(&c).lines().nth(2), Some("200,,,,,"));
    }

    #[test]
    fn tampered_report_is_rejected() {
        let c = curve_from_means(&[100, 200], &[1.0, 1.0], &[0.3, 0.3]);
        let json = to_json(&ReportBundle::new(c, &Thresholds::default())).replace("\"repeats\": 10", "\"repeats\": 11");
        assert!(matches!(from_json(&json), Err(ReportError::HashMismatch { .. })));
    }

    #[test]
    fn csv_layout() {
        let c = curve_from_means(&[1, 2, 3, 4], &[1.0, 0.5, 0.25, 0.125], &[0.1; 4]);
        let csv = to_csv(&c);
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().next().unwrap(), "grid_length,copy_mean,copy_std,lm_mean,lm_std,lm_ppl");
        assert_eq!(csv.lines().nth(2).unwrap(), "2,0.5,0,0.1,0,");
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(0.1234567894, 9), 0.123456789);
        assert_eq!(round_significant(123456.78951, 9), 123456.79);
        assert_eq!(round_significant(0.0, 9), 0.0);
    }
}
