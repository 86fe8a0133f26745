//! Forgetting-curve harness.
//!
//! Measures how far back a language model can reproduce its input by
//! comparing teacher-forced copy accuracy against plain language-modeling
//! accuracy over a grid of context lengths. Models are reached through the
//! [`backend::Backend`] trait, either in-process (the oracles in
//! [`synthetic`]) or over the JSON-lines protocol in [`backend::protocol`].
//!
//! The numeric core in [`analysis::special`] and [`analysis::stats`] is
//! generic over [`num::Real`]; the aliases below pin it to `f64`, which is
//! what the rest of the pipeline uses.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod num;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod selftest;
pub mod synthetic;
pub mod taskgen;

pub use error::{Error, Result};

/// Statistical test outcome at double precision.
pub type StatTestResult = analysis::stats::TestResult<f64>;
/// Degrees of freedom at double precision.
pub type DegreesOfFreedom = analysis::stats::Df<f64>;

pub use analysis::memory::{MemoryLengths, Thresholds};
pub use backend::{Backend, BackendInfo, ScoreResult};
pub use corpus::{Corpus, Span, TokenPool};
pub use evaluator::{CurvePoint, ForgettingCurve, SweepConfig};
pub use report::ReportBundle;
pub use taskgen::{TaskInstance, TaskKind};

/// Tool identifier embedded in every report.
pub const TOOL_VERSION: &str = concat!("fc ", env!("CARGO_PKG_VERSION"));

/// One-way ANOVA at double precision.
pub fn anova_oneway(groups: &[Vec<f64>]) -> std::result::Result<StatTestResult, analysis::stats::StatsError> {
    analysis::stats::anova_oneway(groups)
}

/// Kruskal-Wallis H test at double precision.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> std::result::Result<StatTestResult, analysis::stats::StatsError> {
    analysis::stats::kruskal_wallis(groups)
}

/// Upper tail of the F distribution at double precision.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> std::result::Result<f64, analysis::special::SpecialError> {
    analysis::special::f_sf(x, d1, d2)
}

/// Upper tail of the chi-squared distribution at double precision.
pub fn chi2_sf(x: f64, df: f64) -> std::result::Result<f64, analysis::special::SpecialError> {
    analysis::special::chi2_sf(x, df)
}
