//! Corpus loading, token pools and span sampling.
//!
//! Documents are tokenized one at a time by the backend and concatenated in
//! manifest order. Copy targets and irrelevant prefixes are contiguous spans
//! of that pool; spans may cross document boundaries.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{tokenize_chunked, Backend, BackendError};

const POOL_MAGIC: &[u8; 7] = b"FCPOOL1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("manifest lists no documents")]
    EmptyManifest,
    #[error("document {doc_id} is not valid UTF-8")]
    Undecodable { doc_id: String },
    #[error("document {doc_id} is empty")]
    EmptyDocument { doc_id: String },
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("document {doc_id} produced zero tokens")]
    ZeroTokens { doc_id: String },
    #[error("tokenizing {doc_id}: {source}")]
    Backend {
        doc_id: String,
        #[source]
        source: BackendError,
    },
    #[error("pool exhausted: {pool_len} tokens cannot host disjoint spans of {s_len} and {i_len}")]
    PoolExhausted { pool_len: usize, s_len: usize, i_len: usize },
    #[error("invalid span request: {0}")]
    InvalidSpan(String),
    #[error("invalid pool file: {0}")]
    PoolFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub pool_label: String,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, pool_label: impl Into<String>) -> Result<Self, CorpusError> {
        if documents.is_empty() {
            return Err(CorpusError::EmptyManifest);
        }
        let mut seen = std::collections::HashSet::new();
        for d in &documents {
            if d.text.is_empty() {
                return Err(CorpusError::EmptyDocument { doc_id: d.id.clone() });
            }
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Corpus { documents, pool_label: pool_label.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Txt,
    Jsonl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub format: DocFormat,
    #[serde(default)]
    pub text_field: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub documents: Vec<ManifestEntry>,
    #[serde(default = "default_pool_label")]
    pub pool_label: String,
}

fn default_pool_label() -> String {
    "corpus".into()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CorpusError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::NotFound(path.to_path_buf())
        } else {
            CorpusError::Io { path: path.to_path_buf(), source }
        }
    })
}

/// Load the documents listed in a JSON manifest. Relative document paths
/// resolve against the manifest's directory. Each JSON-lines record becomes
/// its own document with id `<entry id>#<line number>`.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let bytes = read_bytes(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| CorpusError::Manifest {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.documents.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut documents = Vec::new();
    for entry in &manifest.documents {
        let path = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let raw = read_bytes(&path)?;
        let text = String::from_utf8(raw).map_err(|_| CorpusError::Undecodable { doc_id: entry.id.clone() })?;
        match entry.format {
            DocFormat::Txt => documents.push(Document { id: entry.id.clone(), text }),
            DocFormat::Jsonl => {
                let field = entry.text_field.as_deref().unwrap_or("text");
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let doc_id = format!("{}#{}", entry.id, n + 1);
                    let record: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                        CorpusError::Manifest { path: path.clone(), reason: format!("line {}: {e}", n + 1) }
                    })?;
                    let text = record.get(field).and_then(|v| v.as_str()).ok_or_else(|| {
                        CorpusError::Manifest {
                            path: path.clone(),
                            reason: format!("line {} lacks string field {field:?}", n + 1),
                        }
                    })?;
                    documents.push(Document { id: doc_id, text: text.to_string() });
                }
            }
        }
    }
    Corpus::new(documents, manifest.pool_label)
}

/// Half-open range `[start, start + length)` of a token pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub length: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPool {
    pub ids: Vec<u32>,
    pub doc_offsets: Vec<(String, usize)>,
    pub tokenizer_fingerprint: String,
    pub label: String,
}

impl TokenPool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn slice(&self, span: Span) -> &[u32] {
        &self.ids[span.start..span.end()]
    }

    /// Uniform token ids in `[3, vocab)`, i.e. avoiding the synthetic
    /// delimiter ids.
    pub fn uniform_random<R: Rng>(len: usize, vocab: u32, rng: &mut R) -> Self {
        let lo = crate::synthetic::BYTE_OFFSET.min(vocab.saturating_sub(1));
        TokenPool {
            ids: (0..len).map(|_| rng.random_range(lo..vocab)).collect(),
            doc_offsets: vec![("random".into(), 0)],
            tokenizer_fingerprint: format!("uniform-random/{vocab}"),
            label: "random".into(),
        }
    }

    /// Write the cache format: magic `FCPOOL1`, fingerprint length (u32 LE)
    /// and bytes, token count (u64 LE), then the ids as u32 LE.
    pub fn write_cache<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(POOL_MAGIC)?;
        let fp = self.tokenizer_fingerprint.as_bytes();
        w.write_all(&(fp.len() as u32).to_le_bytes())?;
        w.write_all(fp)?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        w.flush()
    }

    /// Read a pool written by [`TokenPool::write_cache`]. Document offsets
    /// are not cached.
    pub fn read_cache<R: Read>(mut r: R, label: impl Into<String>) -> Result<Self, CorpusError> {
        let bad = |what: &str| CorpusError::PoolFile(what.to_string());
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| CorpusError::PoolFile(e.to_string()))?;
        let rest = buf.strip_prefix(POOL_MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        let (len_bytes, rest) = rest.split_at_checked(4).ok_or_else(|| bad("truncated header"))?;
        let fp_len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let (fp, rest) = rest.split_at_checked(fp_len).ok_or_else(|| bad("truncated fingerprint"))?;
        let fingerprint = std::str::from_utf8(fp).map_err(|_| bad("fingerprint is not UTF-8"))?;
        let (count_bytes, body) = rest.split_at_checked(8).ok_or_else(|| bad("truncated count"))?;
        let count = u64::from_le_bytes(count_bytes.try_into().expect("8 bytes")) as usize;
        if body.len() != count.checked_mul(4).ok_or_else(|| bad("count overflow"))? {
            return Err(bad("token count does not match payload length"));
        }
        let ids = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(TokenPool {
            ids,
            doc_offsets: Vec::new(),
            tokenizer_fingerprint: fingerprint.to_string(),
            label: label.into(),
        })
    }
}

/// Tokenize every document independently and concatenate in corpus order.
pub fn build_token_pool<B: Backend + ?Sized>(corpus: &Corpus, backend: &B) -> Result<TokenPool, CorpusError> {
    let mut ids = Vec::new();
    let mut doc_offsets = Vec::with_capacity(corpus.documents.len());
    for doc in &corpus.documents {
        let tokens = tokenize_chunked(backend, &doc.text)
            .map_err(|source| CorpusError::Backend { doc_id: doc.id.clone(), source })?;
        if tokens.is_empty() {
            return Err(CorpusError::ZeroTokens { doc_id: doc.id.clone() });
        }
        doc_offsets.push((doc.id.clone(), ids.len()));
        ids.extend(tokens);
    }
    Ok(TokenPool {
        ids,
        doc_offsets,
        tokenizer_fingerprint: backend.info().fingerprint(),
        label: corpus.pool_label.clone(),
    })
}

/// Number of start positions in `[0, pool_len − s_len]` that leave room for
/// a disjoint span of `i_len` on either side.
fn feasible_copy_starts(pool_len: usize, s_len: usize, i_len: usize) -> (usize, Option<(usize, usize)>) {
    let last = pool_len - s_len;
    // left room: start ≥ i_len; right room: start ≤ pool_len − s_len − i_len
    let right_hi = pool_len.checked_sub(s_len + i_len);
    let left_lo = i_len;
    match right_hi {
        None => (0, None),
        Some(hi) if left_lo <= hi + 1 => (last + 1, None),
        Some(hi) => {
            // two disjoint intervals [0, hi] and [left_lo, last]
            (hi + 1 + (last + 1 - left_lo), Some((hi, left_lo)))
        }
    }
}

/// Copy tokens, irrelevant tokens and the spans they came from.
pub type SampledSpans = (Vec<u32>, Vec<u32>, (Span, Span));

/// Sample a copy target of `s_len` tokens uniformly among positions that
/// admit a disjoint irrelevant span, then an irrelevant span of `i_len`
/// uniformly among positions not overlapping it.
pub fn sample_copy_and_irrelevant<R: Rng>(
    pool: &TokenPool,
    s_len: usize,
    i_len: usize,
    rng: &mut R,
) -> Result<SampledSpans, CorpusError> {
    let (s_span, i_span) = sample_spans(pool.len(), s_len, i_len, rng)?;
    Ok((pool.slice(s_span).to_vec(), pool.slice(i_span).to_vec(), (s_span, i_span)))
}

/// Span-level core of [`sample_copy_and_irrelevant`].
pub fn sample_spans<R: Rng>(pool_len: usize, s_len: usize, i_len: usize, rng: &mut R) -> Result<(Span, Span), CorpusError> {
    if s_len < 2 {
        return Err(CorpusError::InvalidSpan(format!("copy target length {s_len} < 2")));
    }
    if i_len < 1 {
        return Err(CorpusError::InvalidSpan("irrelevant span must be non-empty".into()));
    }
    let exhausted = CorpusError::PoolExhausted { pool_len, s_len, i_len };
    if s_len + i_len > pool_len {
        return Err(exhausted);
    }
    let (count, gap) = feasible_copy_starts(pool_len, s_len, i_len);
    if count == 0 {
        return Err(exhausted);
    }
    let k = rng.random_range(0..count);
    let s_start = match gap {
        Some((hi, left_lo)) if k > hi => left_lo + (k - hi - 1),
        _ => k,
    };
    let s_span = Span { start: s_start, length: s_len };

    let before = (s_start + 1).saturating_sub(i_len);
    let after = (pool_len - s_span.end() + 1).saturating_sub(i_len);
    let k = rng.random_range(0..before + after);
    let i_start = if k < before { k } else { s_span.end() + (k - before) };
    Ok((s_span, Span { start: i_start, length: i_len }))
}

/// Uniform random span of `len` tokens (for an irrelevant pool distinct from
/// the copy pool).
pub fn sample_span<R: Rng>(pool_len: usize, len: usize, rng: &mut R) -> Result<Span, CorpusError> {
    if len == 0 || len > pool_len {
        return Err(CorpusError::PoolExhausted { pool_len, s_len: len, i_len: 0 });
    }
    Ok(Span { start: rng.random_range(0..=pool_len - len), length: len })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(n: u32) -> TokenPool {
        TokenPool {
            ids: (0..n).collect(),
            doc_offsets: vec![("d".into(), 0)],
            tokenizer_fingerprint: "fp".into(),
            label: "test".into(),
        }
    }

    #[test]
    fn spans_never_overlap() {
        let p = pool(100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (s, i, (ss, is)) = sample_copy_and_irrelevant(&p, 10, 10, &mut rng).unwrap();
            assert!(!ss.overlaps(&is), "{ss:?} {is:?}");
            assert_eq!(s, p.slice(ss));
            assert_eq!(i, p.slice(is));
        }
    }

    #[test]
    fn pool_exhausted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_copy_and_irrelevant(&pool(20), 10, 11, &mut rng),
            Err(CorpusError::PoolExhausted { .. })
        ));
    }

    #[test]
    fn tight_pool_uses_only_feasible_starts() {
        // 20 tokens, 10 + 10: only starts 0 and 10 leave room
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let (s, i) = sample_spans(20, 10, 10, &mut rng).unwrap();
            assert!(!s.overlaps(&i));
            seen.insert(s.start);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 10]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = pool(500);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_copy_and_irrelevant(&p, 30, 30, &mut rng).unwrap().2
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn rejects_short_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_spans(100, 1, 5, &mut rng), Err(CorpusError::InvalidSpan(_))));
        assert!(matches!(sample_spans(100, 5, 0, &mut rng), Err(CorpusError::InvalidSpan(_))));
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let p = pool(37);
        let mut buf = Vec::new();
        p.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"FCPOOL1");
        assert_eq!(buf.len(), 7 + 4 + 2 + 8 + 37 * 4);
        let back = TokenPool::read_cache(buf.as_slice(), "test").unwrap();
        assert_eq!(back.ids, p.ids);
        assert_eq!(back.tokenizer_fingerprint, "fp");
        assert!(TokenPool::read_cache(&buf[..buf.len() - 1], "x").is_err());
        assert!(TokenPool::read_cache(&b"NOTPOOL"[..], "x").is_err());
    }

    #[test]
    fn corpus_validation() {
        let doc = |id: &str, t: &str| Document { id: id.into(), text: t.into() };
        assert!(matches!(Corpus::new(vec![], "x"), Err(CorpusError::EmptyManifest)));
        assert!(matches!(Corpus::new(vec![doc("a", "")], "x"), Err(CorpusError::EmptyDocument { .. })));
        assert!(matches!(
            Corpus::new(vec![doc("a", "1"), doc("a", "2")], "x"),
            Err(CorpusError::DuplicateId(_))
        ));
    }
}
