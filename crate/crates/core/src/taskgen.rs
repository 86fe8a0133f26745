//! Copy and language-modeling task instances.
//!
//! Copy:     `[bos] S [bos] S [eos]`
//! LM:       `[bos] I [bos] S [eos]` with `|I| = |S|`
//!
//! Both score the last `⌈|S|/2⌉` tokens of the final `S`, so the two kinds
//! differ only in the first segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Span;

/// Smallest grid length that admits a copy target of two tokens.
pub const MIN_TEST_LENGTH: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("grid too fine: max length {max_len} over {points} points gives lengths below {MIN_TEST_LENGTH}")]
    GridTooFine { max_len: usize, points: usize },
    #[error("copy target must have at least 2 tokens, got {0}")]
    TargetTooShort(usize),
    #[error("irrelevant prefix has {irrelevant} tokens but the target has {target}")]
    LengthMismatch { irrelevant: usize, target: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Lm,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Lm => "lm",
        }
    }
}

/// Provenance of an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub test_length: usize,
    pub repeat_index: usize,
    pub seed: u64,
    pub copy_span: Option<Span>,
    pub irrelevant_span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub ids: Vec<u32>,
    pub scored_positions: Vec<usize>,
    pub s_len: usize,
    pub meta: TaskMeta,
}

impl TaskInstance {
    pub fn scored_tokens(&self) -> Vec<u32> {
        self.scored_positions.iter().map(|&p| self.ids[p]).collect()
    }
}

/// `[⌊l·j/n⌋ for j in 1..=n]`.
pub fn plan_grid(max_len: usize, points: usize) -> Result<Vec<usize>, TaskError> {
    if points == 0 || max_len < points || max_len / points < MIN_TEST_LENGTH {
        return Err(TaskError::GridTooFine { max_len, points });
    }
    Ok((1..=points).map(|j| max_len * j / points).collect())
}

/// Copy target length so that `2·s + 3 ≤ ℓ`.
pub fn target_len_for(test_length: usize) -> usize {
    test_length.saturating_sub(3) / 2
}

/// Last `⌈s/2⌉` positions of the second segment: `2 + s + ⌊s/2⌋ ..= 1 + 2s`.
pub fn scored_positions(s_len: usize) -> Vec<usize> {
    (2 + s_len + s_len / 2..=1 + 2 * s_len).collect()
}

fn assemble(kind: TaskKind, first: &[u32], target: &[u32], bos: u32, eos: u32, meta: TaskMeta) -> TaskInstance {
    let s_len = target.len();
    let mut ids = Vec::with_capacity(2 * s_len + 3);
    ids.push(bos);
    ids.extend_from_slice(first);
    ids.push(bos);
    ids.extend_from_slice(target);
    ids.push(eos);
    TaskInstance { kind, ids, scored_positions: scored_positions(s_len), s_len, meta }
}

pub fn build_copy_instance(s: &[u32], bos: u32, eos: u32, meta: TaskMeta) -> Result<TaskInstance, TaskError> {
    if s.len() < 2 {
        return Err(TaskError::TargetTooShort(s.len()));
    }
    Ok(assemble(TaskKind::Copy, s, s, bos, eos, meta))
}

pub fn build_lm_instance(
    irrelevant: &[u32],
    s: &[u32],
    bos: u32,
    eos: u32,
    meta: TaskMeta,
) -> Result<TaskInstance, TaskError> {
    if s.len() < 2 {
        return Err(TaskError::TargetTooShort(s.len()));
    }
    if irrelevant.len() != s.len() {
        return Err(TaskError::LengthMismatch { irrelevant: irrelevant.len(), target: s.len() });
    }
    Ok(assemble(TaskKind::Lm, irrelevant, s, bos, eos, meta))
}
