//! Corpus loading, token pools and span sampling.

use std::fs;

use forgetting_curve::corpus::{build_token_pool, load_corpus, sample_spans, CorpusError, TokenPool};
use forgetting_curve::synthetic::{OracleBackend, OracleSpec};
use forgetting_curve::chi2_sf;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write_fixture(dir: &std::path::Path) -> std::path::PathBuf {
    fs::write(dir.join("a.txt"), "hello world").unwrap();
    fs::create_dir(dir.join("sub")).unwrap();
    fs::write(dir.join("sub/b.jsonl"), "{\"body\": \"first\"}\n\n{\"body\": \"second\"}\n").unwrap();
    let manifest = dir.join("manifest.json");
    fs::write(
        &manifest,
        r#"{"pool_label": "en_test", "documents": [
            {"id": "a", "path": "a.txt", "format": "txt"},
            {"id": "b", "path": "sub/b.jsonl", "format": "jsonl", "text_field": "body"}
        ]}"#,
    )
    .unwrap();
    manifest
}

#[test]
fn manifest_with_txt_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(&write_fixture(dir.path())).unwrap();
    assert_eq!(corpus.pool_label, "en_test");
    let ids: Vec<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["a", "b#1", "b#3"]);
    assert_eq!(corpus.documents[2].text, "second");

    let oracle = OracleBackend::new(OracleSpec::pure_lm(0.5)).unwrap();
    let pool = build_token_pool(&corpus, &oracle).unwrap();
    assert_eq!(pool.len(), "hello world".len() + "first".len() + "second".len());
    assert_eq!(pool.doc_offsets, vec![("a".into(), 0), ("b#1".into(), 11), ("b#3".into(), 16)]);
    assert_eq!(pool.ids[0], u32::from(b'h') + 3);
    assert_eq!(pool.label, "en_test");
}

#[test]
fn missing_and_malformed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_corpus(&dir.path().join("nope.json")), Err(CorpusError::NotFound(_))));

    let manifest = dir.path().join("m.json");
    fs::write(&manifest, r#"{"documents": [{"id": "x", "path": "missing.txt", "format": "txt"}]}"#).unwrap();
    let err = load_corpus(&manifest).unwrap_err();
    assert!(err.to_string().contains("document not found"), "{err}");

    fs::write(&manifest, r#"{"documents": []}"#).unwrap();
    assert!(matches!(load_corpus(&manifest), Err(CorpusError::EmptyManifest)));

    fs::write(dir.path().join("bad.jsonl"), "{\"text\": 3}\n").unwrap();
    fs::write(&manifest, r#"{"documents": [{"id": "x", "path": "bad.jsonl", "format": "jsonl"}]}"#).unwrap();
    assert!(matches!(load_corpus(&manifest), Err(CorpusError::Manifest { .. })));

    fs::write(dir.path().join("bin.txt"), [0xff, 0xfe, 0x00]).unwrap();
    fs::write(&manifest, r#"{"documents": [{"id": "x", "path": "bin.txt", "format": "txt"}]}"#).unwrap();
    assert!(matches!(load_corpus(&manifest), Err(CorpusError::Undecodable { .. })));
}

#[test]
fn pool_cache_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let pool = TokenPool::uniform_random(5000, 1000, &mut ChaCha8Rng::seed_from_u64(1));
    let path = dir.path().join("pool.bin");
    pool.write_cache(fs::File::create(&path).unwrap()).unwrap();
    let back = TokenPool::read_cache(fs::File::open(&path).unwrap(), "random").unwrap();
    assert_eq!(back.ids, pool.ids);
    assert_eq!(back.tokenizer_fingerprint, pool.tokenizer_fingerprint);
    assert!(pool.ids.iter().all(|&t| (3..1000).contains(&t)));
}

/// Pearson chi-squared p-value of `counts` against a uniform expectation.
fn uniformity_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    chi2_sf(stat, (counts.len() - 1) as f64).unwrap()
}

#[test]
fn copy_starts_are_uniform_over_feasible_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // wide pool: every start in [0, 50] admits a disjoint irrelevant span
    let mut counts = vec![0u64; 51];
    for _ in 0..20_000 {
        let (s, i) = sample_spans(60, 10, 10, &mut rng).unwrap();
        counts[s.start] += 1;
        assert!(!s.overlaps(&i));
    }
    assert!(uniformity_p(&counts) > 0.001);

    // tight pool: starts 9..=11 are infeasible (no room for 12 tokens either side)
    let mut counts = [0u64; 21];
    for _ in 0..20_000 {
        let (s, _) = sample_spans(30, 10, 12, &mut rng).unwrap();
        counts[s.start] += 1;
    }
    assert_eq!(&counts[9..12], &[0, 0, 0]);
    let feasible: Vec<u64> = counts[..9].iter().chain(&counts[12..]).copied().collect();
    assert!(uniformity_p(&feasible) > 0.001);
}

#[test]
fn irrelevant_starts_are_uniform_given_the_copy_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // with S at 0 the irrelevant span may start anywhere in [10, 50]
    let mut counts = vec![0u64; 41];
    let mut seen = 0;
    while seen < 10_000 {
        let (s, i) = sample_spans(60, 10, 10, &mut rng).unwrap();
        if s.start == 0 {
            counts[i.start - 10] += 1;
            seen += 1;
        }
    }
    assert!(uniformity_p(&counts) > 0.001);
}

#[test]
fn exhausted_pool_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_spans(19, 10, 10, &mut rng), Err(CorpusError::PoolExhausted { .. })));
    assert!(sample_spans(20, 10, 10, &mut rng).is_ok());
}
