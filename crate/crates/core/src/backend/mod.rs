//! Model backend abstraction.
//!
//! A backend tokenizes text and scores teacher-forced next-token predictions:
//! for each requested position `p`, it reports whether its argmax prediction
//! given the full prefix `ids[..p]` equals `ids[p]`, and optionally the
//! natural-log probability it assigned to `ids[p]`.

pub mod protocol;
pub mod remote;

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteOptions};

/// Protocol version spoken by this harness.
pub const PROTOCOL_VERSION: u32 = 1;

/// Largest text payload sent in a single tokenize request.
pub const TOKENIZE_CHUNK_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("protocol error: {message} (payload: {raw})")]
    Protocol { message: String, raw: String },
    #[error("protocol version mismatch: backend speaks fcp {got:?}, harness speaks fcp {PROTOCOL_VERSION}")]
    VersionMismatch { got: Option<u64> },
    #[error("backend reported an error: {0}")]
    Remote(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("backend connection closed")]
    Closed,
    #[error("backend i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid score request: {0}")]
    Precondition(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("sequence of {len} tokens exceeds the backend context of {max}")]
    ContextOverflow { len: usize, max: u64 },
    #[error("backend returned an invalid result: {0}")]
    InvalidResult(String),
}

/// Claimed context window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxContext {
    Tokens(u64),
    Unbounded,
}

impl MaxContext {
    pub fn admits(&self, len: usize) -> bool {
        match self {
            MaxContext::Tokens(max) => len as u64 <= *max,
            MaxContext::Unbounded => true,
        }
    }

    pub fn tokens(&self) -> Option<u64> {
        match self {
            MaxContext::Tokens(t) => Some(*t),
            MaxContext::Unbounded => None,
        }
    }
}

impl Serialize for MaxContext {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MaxContext::Tokens(t) => s.serialize_u64(*t),
            MaxContext::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for MaxContext {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MaxContext;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive token count or \"unbounded\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<MaxContext, E> {
                if v == 0 {
                    Err(E::custom("max_context must be positive"))
                } else {
                    Ok(MaxContext::Tokens(v))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<MaxContext, E> {
                u64::try_from(v).map_err(|_| E::custom("max_context must be positive"))
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<MaxContext, E> {
                if v == "unbounded" {
                    Ok(MaxContext::Unbounded)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Static descriptor returned by the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub max_context: MaxContext,
    pub bos_id: Option<u32>,
    pub eos_id: Option<u32>,
    pub supports_logprob: bool,
    #[serde(default)]
    pub supports_concurrent: bool,
}

impl BackendInfo {
    /// Identifies the tokenizer that produced a token pool.
    pub fn fingerprint(&self) -> String {
        match &self.version {
            Some(v) => format!("{}@{}", self.name, v),
            None => self.name.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.name.is_empty() {
            return Err(BackendError::InvalidResult("backend name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub correct: Vec<bool>,
    pub logprob: Option<Vec<f64>>,
}

impl ScoreResult {
    pub fn n_correct(&self) -> usize {
        self.correct.iter().filter(|&&c| c).count()
    }
}

pub trait Backend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError>;

    /// Teacher-forced scoring of `ids` at strictly increasing `positions`.
    fn score(&self, ids: &[u32], positions: &[usize], want_logprob: bool) -> Result<ScoreResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        (**self).tokenize(text)
    }

    fn score(&self, ids: &[u32], positions: &[usize], want_logprob: bool) -> Result<ScoreResult, BackendError> {
        (**self).score(ids, positions, want_logprob)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        (**self).tokenize(text)
    }

    fn score(&self, ids: &[u32], positions: &[usize], want_logprob: bool) -> Result<ScoreResult, BackendError> {
        (**self).score(ids, positions, want_logprob)
    }
}

/// Check a score request against the protocol preconditions.
pub fn check_score_request(info: &BackendInfo, ids: &[u32], positions: &[usize]) -> Result<(), BackendError> {
    if !info.max_context.admits(ids.len()) {
        return Err(BackendError::ContextOverflow {
            len: ids.len(),
            max: info.max_context.tokens().unwrap_or(u64::MAX),
        });
    }
    let mut prev = 0usize;
    for (j, &p) in positions.iter().enumerate() {
        if p == 0 {
            return Err(BackendError::Precondition("position 0 has no prefix".into()));
        }
        if p >= ids.len() {
            return Err(BackendError::Precondition(format!(
                "position {p} out of range for {} ids",
                ids.len()
            )));
        }
        if j > 0 && p <= prev {
            return Err(BackendError::Precondition("positions must be strictly increasing".into()));
        }
        prev = p;
    }
    Ok(())
}

/// Check a score result against the request it answers.
pub fn check_score_result(
    info: &BackendInfo,
    positions: &[usize],
    want_logprob: bool,
    result: &ScoreResult,
) -> Result<(), BackendError> {
    if result.correct.len() != positions.len() {
        return Err(BackendError::InvalidResult(format!(
            "{} flags for {} positions",
            result.correct.len(),
            positions.len()
        )));
    }
    match (&result.logprob, want_logprob && info.supports_logprob) {
        (Some(lp), true) => {
            if lp.len() != positions.len() {
                return Err(BackendError::InvalidResult(format!(
                    "{} logprobs for {} positions",
                    lp.len(),
                    positions.len()
                )));
            }
            if let Some(bad) = lp.iter().find(|v| v.is_nan() || **v > 0.0) {
                return Err(BackendError::InvalidResult(format!("logprob {bad} is not ≤ 0")));
            }
        }
        (None, true) => return Err(BackendError::InvalidResult("requested logprobs missing".into())),
        (Some(_), false) => return Err(BackendError::InvalidResult("unrequested logprobs returned".into())),
        (None, false) => {}
    }
    Ok(())
}

/// Tokenize `text` in pieces of at most [`TOKENIZE_CHUNK_BYTES`], split on
/// character boundaries, and concatenate the ids.
pub fn tokenize_chunked<B: Backend + ?Sized>(backend: &B, text: &str) -> Result<Vec<u32>, BackendError> {
    let mut ids = Vec::new();
    for chunk in chunks(text, TOKENIZE_CHUNK_BYTES) {
        ids.extend(backend.tokenize(chunk)?);
    }
    Ok(ids)
}

fn chunks(text: &str, max_bytes: usize) -> impl Iterator<Item = &str> {
    let mut rest = text;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let mut cut = rest.len().min(max_bytes);
        while !rest.is_char_boundary(cut) {
            cut -= 1;
        }
        let (head, tail) = rest.split_at(cut);
        rest = tail;
        Some(head)
    })
}

/// Resolve the delimiter ids used by the task templates, substituting
/// `separator` for whichever of bos/eos the backend lacks.
pub fn resolve_delimiters(info: &BackendInfo, separator: Option<u32>) -> Result<(u32, u32), BackendError> {
    let pick = |id: Option<u32>, which: &str| {
        id.or(separator).ok_or_else(|| {
            BackendError::Precondition(format!(
                "backend declares no {which} token; supply a separator token id"
            ))
        })
    };
    Ok((pick(info.bos_id, "bos")?, pick(info.eos_id, "eos")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info() -> BackendInfo {
        BackendInfo {
            name: "t".into(),
            version: None,
            max_context: MaxContext::Tokens(8),
            bos_id: Some(1),
            eos_id: None,
            supports_logprob: true,
            supports_concurrent: false,
        }
    }

    #[test]
    fn max_context_serde() {
        assert_eq!(serde_json::to_string(&MaxContext::Unbounded).unwrap(), "\"unbounded\"");
        assert_eq!(serde_json::from_str::<MaxContext>("32768").unwrap(), MaxContext::Tokens(32768));
        assert!(serde_json::from_str::<MaxContext>("0").is_err());
        assert!(serde_json::from_str::<MaxContext>("\"lots\"").is_err());
    }

    #[test]
    fn score_request_preconditions() {
        let i = info();
        assert!(check_score_request(&i, &[1, 5, 6], &[1, 2]).is_ok());
        assert!(matches!(check_score_request(&i, &[1, 5, 6], &[0]), Err(BackendError::Precondition(_))));
        assert!(matches!(check_score_request(&i, &[1, 5, 6], &[3]), Err(BackendError::Precondition(_))));
        assert!(matches!(check_score_request(&i, &[1, 5, 6], &[2, 1]), Err(BackendError::Precondition(_))));
        assert!(matches!(
            check_score_request(&i, &[0; 9], &[1]),
            Err(BackendError::ContextOverflow { len: 9, max: 8 })
        ));
    }

    #[test]
    fn score_result_checks() {
        let i = info();
        let ok = ScoreResult { correct: vec![true], logprob: Some(vec![-0.5]) };
        assert!(check_score_result(&i, &[1], true, &ok).is_ok());
        let positive = ScoreResult { correct: vec![true], logprob: Some(vec![0.1]) };
        assert!(check_score_result(&i, &[1], true, &positive).is_err());
        let short = ScoreResult { correct: vec![], logprob: None };
        assert!(check_score_result(&i, &[1], false, &short).is_err());
    }

    #[test]
    fn chunking_respects_char_boundaries() {
        let text = "aé".repeat(10);
        let pieces: Vec<&str> = chunks(&text, 4).collect();
        assert_eq!(pieces.concat(), text);
        assert!(pieces.iter().all(|p| p.len() <= 4 && !p.is_empty()));
        assert_eq!(chunks("", 4).count(), 0);
    }

    #[test]
    fn delimiter_substitution() {
        let i = info();
        assert!(resolve_delimiters(&i, None).is_err());
        assert_eq!(resolve_delimiters(&i, Some(0)).unwrap(), (1, 0));
    }
}
