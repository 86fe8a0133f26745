//! One-way ANOVA and the Kruskal-Wallis H test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::special::{chi2_sf, f_sf, SpecialError};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} groups, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("group {index} has {len} values, need at least {needed}")]
    GroupTooSmall { index: usize, len: usize, needed: usize },
    #[error("need at least {needed} observations in total, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),
    #[error("non-finite observation")]
    NonFinite,
    #[error(transparent)]
    Special(#[from] SpecialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AnovaOneway,
    KruskalWallis,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::AnovaOneway => "anova_oneway",
            Method::KruskalWallis => "kruskal_wallis",
        }
    }
}

/// Degrees of freedom: a pair for F tests, a single value for chi-squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Df<T> {
    One(T),
    Two(T, T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult<T> {
    pub method: Method,
    pub statistic: T,
    pub df: Df<T>,
    pub p_value: T,
}

fn check_finite<T: Real>(groups: &[Vec<T>]) -> Result<(), StatsError> {
    if groups.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |a, &v| a + v) / T::from_count(values.len())
}

/// One-way ANOVA: `F = MSB / MSW` with `(k − 1, N − k)` degrees of freedom.
pub fn anova_oneway<T: Real>(groups: &[Vec<T>]) -> Result<TestResult<T>, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, got: k });
    }
    for (index, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { index, len: g.len(), needed: 2 });
        }
    }
    check_finite(groups)?;

    let n: usize = groups.iter().map(Vec::len).sum();
    let means: Vec<T> = groups.iter().map(|g| mean(g)).collect();
    let grand = groups.iter().flatten().fold(T::zero(), |a, &v| a + v) / T::from_count(n);

    let ss_between = groups
        .iter()
        .zip(&means)
        .fold(T::zero(), |acc, (g, &m)| acc + T::from_count(g.len()) * (m - grand) * (m - grand));
    let ss_within = groups.iter().zip(&means).fold(T::zero(), |acc, (g, &m)| {
        acc + g.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m))
    });
    if ss_within <= T::zero() {
        return Err(StatsError::UndefinedStatistic("zero within-group variance"));
    }

    let d1 = T::from_count(k - 1);
    let d2 = T::from_count(n - k);
    let f = (ss_between / d1) / (ss_within / d2);
    let p = f_sf(f, d1, d2)?;
    Ok(TestResult { method: Method::AnovaOneway, statistic: f, df: Df::Two(d1, d2), p_value: p })
}

/// Kruskal-Wallis H test on average ranks with the tie correction
/// `1 − Σ(t³ − t) / (N³ − N)`; `H ~ χ²(k − 1)`.
pub fn kruskal_wallis<T: Real>(groups: &[Vec<T>]) -> Result<TestResult<T>, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, got: k });
    }
    for (index, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(StatsError::GroupTooSmall { index, len: 0, needed: 1 });
        }
    }
    check_finite(groups)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: n });
    }

    let mut pooled: Vec<(T, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.iter().map(move |&v| (v, gi)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values are ordered"));

    let mut rank_sums = vec![T::zero(); k];
    let mut tie_sum = T::zero();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = T::from_count(i + 1 + j) / T::lit(2.0);
        for &(_, g) in &pooled[i..j] {
            rank_sums[g] = rank_sums[g] + avg;
        }
        let t = T::from_count(j - i);
        tie_sum = tie_sum + t * t * t - t;
        i = j;
    }

    let nf = T::from_count(n);
    let correction = T::one() - tie_sum / (nf * nf * nf - nf);
    if correction <= T::zero() {
        return Err(StatsError::UndefinedStatistic("all observations are identical"));
    }
    let weighted = groups
        .iter()
        .zip(&rank_sums)
        .fold(T::zero(), |acc, (g, &r)| acc + r * r / T::from_count(g.len()));
    let h = T::lit(12.0) * weighted / (nf * (nf + T::one())) - T::lit(3.0) * (nf + T::one());
    let h = (h / correction).max(T::zero());
    let df = T::from_count(k - 1);
    let p = chi2_sf(h, df)?;
    Ok(TestResult { method: Method::KruskalWallis, statistic: h, df: Df::One(df), p_value: p })
}
