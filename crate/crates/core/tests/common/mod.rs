//! Random inputs shared by the integration tests.
#![allow(dead_code)]

use haldetect::corpus::{AnnotatedSpan, RagRecord, Split, TaskType, CATEGORIES};
use rand::Rng;
use serde_json::Map;

/// Letters, digits, punctuation, whitespace and a few multi-byte chars,
/// including the marker characters `<`, `>` and `/`.
const ALPHABET: &[char] = &[
    'a', 'b', 'c', 'H', 'A', 'L', 'z', '0', '7', ' ', ' ', ' ', '\n', '.', ',', '<', '>', '/', 'ğ', 'ü', 'ş', 'İ',
    'ı', 'ö', 'ç', '—', '漢', '😀',
];

pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    loop {
        let len = rng.gen_range(0..=max_len);
        let text: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect();
        if !text.contains("<HAL>") && !text.contains("</HAL>") {
            return text;
        }
    }
}

/// Sorted, non-overlapping, non-empty spans over `len` chars (they may touch).
pub fn random_spans<R: Rng>(rng: &mut R, len: usize, max_spans: usize) -> Vec<AnnotatedSpan> {
    let mut cuts: Vec<usize> = (0..rng.gen_range(0..=2 * max_spans)).map(|_| rng.gen_range(0..=len)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.chunks_exact(2)
        .map(|c| AnnotatedSpan::new(c[0], c[1], CATEGORIES[rng.gen_range(0..CATEGORIES.len())]))
        .collect()
}

/// Arbitrary valid spans: possibly unsorted and overlapping.
pub fn random_raw_spans<R: Rng>(rng: &mut R, len: usize, max_spans: usize) -> Vec<AnnotatedSpan> {
    if len == 0 {
        return Vec::new();
    }
    (0..rng.gen_range(0..=max_spans))
        .map(|_| {
            let start = rng.gen_range(0..len);
            let end = rng.gen_range(start + 1..=len);
            AnnotatedSpan::new(start, end, CATEGORIES[rng.gen_range(0..CATEGORIES.len())])
        })
        .collect()
}

pub fn random_record<R: Rng>(rng: &mut R, index: usize) -> RagRecord {
    let answer = random_text(rng, 60);
    let len = answer.chars().count();
    RagRecord {
        id: format!("r{index}"),
        task_type: TaskType::ALL[rng.gen_range(0..3)],
        split: if rng.gen_bool(0.5) { Split::Train } else { Split::Test },
        language: "tr".into(),
        prompt: random_text(rng, 60),
        answer,
        labels: random_raw_spans(rng, len, 3),
        source_model: None,
        extra: Map::new(),
    }
}

/// Per-char membership in the union of `spans`.
pub fn bitmap(len: usize, spans: &[AnnotatedSpan]) -> Vec<bool> {
    let mut bits = vec![false; len];
    for s in spans {
        for b in &mut bits[s.start..s.end] {
            *b = true;
        }
    }
    bits
}
