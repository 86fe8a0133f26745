//! In-process oracle backends with known memory behavior.
//!
//! * `induction`: predicts by longest-suffix match within a window of `w`
//!   tokens, so copy accuracy is exactly 1 while `|S| + 1 ≤ w`.
//! * `decay`: honors a match at distance `d` with probability 1 up to `w1`,
//!   `p` from `w2` on, and a linear ramp in between.
//! * `pure_lm`: ignores the prefix entirely; every position is correct with
//!   probability `p`.
//!
//! Whenever no usable match exists the oracle falls back to "correct with
//! probability `p`". All randomness is a hash of the oracle seed, the
//! position and a digest of the tokens since the last `bos`, so results do
//! not depend on request order, and a copy instance and the LM instance
//! sharing its target draw the same numbers. The decay oracle reuses that
//! draw when deciding whether to honor a match.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{check_score_request, Backend, BackendError, BackendInfo, MaxContext, ScoreResult};
use crate::seed::{derive, unit_interval, Digest};

pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
/// Byte-level token ids start here; 0 is unused, 1 and 2 are delimiters.
pub const BYTE_OFFSET: u32 = 3;
pub const DEFAULT_MIN_MATCH: usize = 8;

/// Log-probability floor for outcomes the oracle treats as impossible.
const LOGPROB_FLOOR: f64 = -13.815_510_557_964_274; // ln 1e-6

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid oracle spec {spec:?}: {reason}")]
pub struct OracleSpecError {
    pub spec: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Induction,
    Decay,
    PureLm,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Induction => "induction",
            OracleKind::Decay => "decay",
            OracleKind::PureLm => "pure_lm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    /// Induction window `w`.
    pub window: usize,
    /// Decay ramp `[w1, w2]`.
    pub window_lo: usize,
    pub window_hi: usize,
    /// Fallback accuracy `p`.
    pub lm_acc: f64,
    pub min_match: usize,
    pub seed: u64,
    /// Advertise and emit log-probabilities.
    pub logprob: bool,
}

impl OracleSpec {
    pub fn induction(window: usize, lm_acc: f64) -> Self {
        OracleSpec { kind: OracleKind::Induction, window, ..Self::base(lm_acc) }
    }

    pub fn decay(window_lo: usize, window_hi: usize, lm_acc: f64) -> Self {
        OracleSpec { kind: OracleKind::Decay, window_lo, window_hi, ..Self::base(lm_acc) }
    }

    pub fn pure_lm(lm_acc: f64) -> Self {
        Self::base(lm_acc)
    }

    fn base(lm_acc: f64) -> Self {
        OracleSpec {
            kind: OracleKind::PureLm,
            window: 1,
            window_lo: 0,
            window_hi: 1,
            lm_acc,
            min_match: DEFAULT_MIN_MATCH,
            seed: 0,
            logprob: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_min_match(mut self, m: usize) -> Self {
        self.min_match = m;
        self
    }

    pub fn with_logprob(mut self, on: bool) -> Self {
        self.logprob = on;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lm_acc) {
            return Err(format!("p = {} is outside [0, 1]", self.lm_acc));
        }
        if self.min_match == 0 {
            return Err("m must be at least 1".into());
        }
        match self.kind {
            OracleKind::Induction if self.window == 0 => Err("w must be at least 1".into()),
            OracleKind::Decay if self.window_lo >= self.window_hi => {
                Err(format!("w1 = {} must be below w2 = {}", self.window_lo, self.window_hi))
            }
            _ => Ok(()),
        }
    }
}

/// `kind:key=value,...`, e.g. `induction:w=512,p=0.3,m=8` or
/// `decay:w1=256,w2=1024,p=0.3,logprob`.
impl FromStr for OracleSpec {
    type Err = OracleSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = |reason: String| OracleSpecError { spec: s.to_string(), reason };
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = match kind.trim() {
            "induction" => OracleSpec { kind: OracleKind::Induction, window: 0, ..Self::base(0.0) },
            "decay" => OracleSpec { kind: OracleKind::Decay, window_lo: 0, window_hi: 0, ..Self::base(0.0) },
            "pure_lm" => Self::base(0.0),
            other => return Err(fail(format!("unknown oracle kind {other:?}"))),
        };
        for item in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = item.split_once('=').unwrap_or((item, "true"));
            let int = || value.parse::<usize>().map_err(|e| fail(format!("{key}: {e}")));
            match key {
                "w" => spec.window = int()?,
                "w1" => spec.window_lo = int()?,
                "w2" => spec.window_hi = int()?,
                "m" => spec.min_match = int()?,
                "p" => spec.lm_acc = value.parse().map_err(|e| fail(format!("p: {e}")))?,
                "seed" => spec.seed = value.parse().map_err(|e| fail(format!("seed: {e}")))?,
                "logprob" => spec.logprob = value.parse().map_err(|e| fail(format!("logprob: {e}")))?,
                other => return Err(fail(format!("unknown parameter {other:?}"))),
            }
        }
        spec.validate().map_err(fail)?;
        Ok(spec)
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.kind.name())?;
        match self.kind {
            OracleKind::Induction => write!(f, "w={},", self.window)?,
            OracleKind::Decay => write!(f, "w1={},w2={},", self.window_lo, self.window_hi)?,
            OracleKind::PureLm => {}
        }
        write!(f, "p={},m={},seed={}", self.lm_acc, self.min_match, self.seed)?;
        if self.logprob {
            f.write_str(",logprob")?;
        }
        Ok(())
    }
}

/// Outcome at one scored position.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    correct: bool,
    logprob: f64,
}

pub struct OracleBackend {
    spec: OracleSpec,
    info: BackendInfo,
}

impl OracleBackend {
    pub fn new(spec: OracleSpec) -> Result<Self, OracleSpecError> {
        spec.validate().map_err(|reason| OracleSpecError { spec: spec.to_string(), reason })?;
        let info = BackendInfo {
            name: spec.kind.name().to_string(),
            version: None,
            max_context: MaxContext::Unbounded,
            bos_id: Some(BOS_ID),
            eos_id: Some(EOS_ID),
            supports_logprob: spec.logprob,
            supports_concurrent: true,
        };
        Ok(OracleBackend { spec, info })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    fn fallback(&self, position: usize, digest: u64) -> Outcome {
        let u = unit_interval(derive(self.spec.seed, &[position as u64, digest]));
        Outcome { correct: u < self.spec.lm_acc, logprob: ln_floor(self.spec.lm_acc) }
    }

    /// Decide a position given the best suffix match `(end, distance)`.
    fn matched(&self, ids: &[u32], position: usize, digest: u64, end: usize, distance: usize) -> Outcome {
        let hit = ids[end + 1] == ids[position];
        match self.spec.kind {
            OracleKind::Induction => Outcome { correct: hit, logprob: if hit { 0.0 } else { LOGPROB_FLOOR } },
            OracleKind::Decay => {
                let q = self.honor_probability(distance);
                let u = unit_interval(derive(self.spec.seed, &[position as u64, digest]));
                Outcome { correct: hit && u < q, logprob: if hit { ln_floor(q) } else { LOGPROB_FLOOR } }
            }
            OracleKind::PureLm => unreachable!("pure_lm never matches"),
        }
    }

    /// Probability that the decay oracle honors a match at `distance`.
    pub fn honor_probability(&self, distance: usize) -> f64 {
        let (lo, hi, p) = (self.spec.window_lo, self.spec.window_hi, self.spec.lm_acc);
        if distance <= lo {
            1.0
        } else if distance >= hi {
            p
        } else {
            1.0 - (1.0 - p) * (distance - lo) as f64 / (hi - lo) as f64
        }
    }

    fn outcomes(&self, ids: &[u32], positions: &[usize]) -> Vec<Outcome> {
        let Some(&last) = positions.last() else { return Vec::new() };
        let m = self.spec.min_match;
        let use_matches = self.spec.kind != OracleKind::PureLm;

        // m-gram (by end index) → earlier end indices with the same m-gram
        let mut grams: HashMap<&[u32], Vec<usize>> = HashMap::new();
        // match end → suffix match length, for the current prefix end
        let mut active: HashMap<usize, usize> = HashMap::new();
        let mut digest = Digest::new();
        let mut out = Vec::with_capacity(positions.len());
        let mut next = positions.iter().copied().peekable();

        for t in 0..last {
            if ids[t] == BOS_ID {
                digest = Digest::new();
            } else {
                digest.push(ids[t]);
            }
            if use_matches {
                let mut current = HashMap::new();
                if t + 1 >= m {
                    let gram = &ids[t + 1 - m..=t];
                    let ends = grams.entry(gram).or_default();
                    for &e in ends.iter() {
                        let len = e.checked_sub(1).and_then(|p| active.get(&p)).map_or(m, |l| l + 1);
                        current.insert(e, len);
                    }
                    ends.push(t);
                }
                active = current;
            }
            if next.peek() != Some(&(t + 1)) {
                continue;
            }
            let position = next.next().expect("peeked");
            let best = active
                .iter()
                .map(|(&end, &len)| (len, end, t - end))
                .filter(|&(_, _, d)| self.spec.kind != OracleKind::Induction || d <= self.spec.window)
                .max_by_key(|&(len, end, _)| (len, end));
            out.push(match best {
                Some((_, end, d)) => self.matched(ids, position, digest.value(), end, d),
                None => self.fallback(position, digest.value()),
            });
        }
        out
    }
}

fn ln_floor(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOGPROB_FLOOR)
    } else {
        LOGPROB_FLOOR
    }
}

impl Backend for OracleBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        Ok(text.bytes().map(|b| u32::from(b) + BYTE_OFFSET).collect())
    }

    fn score(&self, ids: &[u32], positions: &[usize], want_logprob: bool) -> Result<ScoreResult, BackendError> {
        check_score_request(&self.info, ids, positions)?;
        let outcomes = self.outcomes(ids, positions);
        Ok(ScoreResult {
            correct: outcomes.iter().map(|o| o.correct).collect(),
            logprob: (want_logprob && self.spec.logprob).then(|| outcomes.iter().map(|o| o.logprob).collect()),
        })
    }
}
