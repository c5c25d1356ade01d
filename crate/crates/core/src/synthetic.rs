//! Deterministic toy corpora for smoke tests and examples.
//!
//! Answers mix words copied from the prompt with words drawn from a separate
//! "fabricated" vocabulary; each fabricated run is annotated as a span. A
//! detector that learns which words never appear in prompts can fit this
//! corpus perfectly, which makes it a convenient overfitting target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

use crate::corpus::{AnnotatedSpan, RagRecord, Split, TaskType, CATEGORIES};

const SUPPORTED: &[&str] = &[
    "river", "bridge", "station", "museum", "harbor", "market", "library", "garden", "castle", "valley",
    "tower", "school", "forest", "island", "temple", "palace", "square", "canal", "mill", "farm",
];

const FABRICATED: &[&str] = &[
    "zephyrium", "quorvath", "blintex", "morravon", "glistrade", "vonderkai", "traxilon", "ombrelith",
    "fennoquay", "sturnwick", "pellidor", "kastravel",
];

const FILLER: &[&str] = &["the", "a", "near", "with", "and", "of", "has", "is"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub records: usize,
    pub seed: u64,
    /// Words per answer, before fabricated runs are inserted.
    pub answer_words: usize,
    /// Upper bound on fabricated runs per answer; each record gets 0..=max.
    pub max_spans: usize,
    pub language: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            records: 40,
            seed: 0,
            answer_words: 12,
            max_spans: 2,
            language: "en".into(),
        }
    }
}

/// Generates `config.records` valid records; task types cycle through QA,
/// Data2txt and Summary, and every fourth record is in the test split.
pub fn generate(config: &SyntheticConfig) -> Vec<RagRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.records).map(|i| record(i, config, &mut rng)).collect()
}

fn record(i: usize, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> RagRecord {
    let context: Vec<&str> = SUPPORTED.choose_multiple(rng, 8).copied().collect();
    let task_type = TaskType::ALL[i % 3];
    let prompt = format!(
        "{} Context: {}.",
        match task_type {
            TaskType::QA => "Answer the question using the passage.",
            TaskType::Data2txt => "Describe the structured data.",
            TaskType::Summary => "Summarize the text.",
        },
        context.join(" ")
    );

    let mut words: Vec<(String, bool)> = (0..config.answer_words)
        .map(|k| {
            let pool: &[&str] = if k % 2 == 0 { &context } else { FILLER };
            (pool.choose(rng).expect("non-empty pool").to_string(), false)
        })
        .collect();
    let spans = rng.gen_range(0..=config.max_spans);
    for _ in 0..spans {
        let run = rng.gen_range(1..=2);
        let at = rng.gen_range(0..=words.len());
        for j in 0..run {
            let w = FABRICATED.choose(rng).expect("non-empty pool").to_string();
            words.insert(at + j, (w, true));
        }
    }

    let mut answer = String::new();
    let mut labels: Vec<AnnotatedSpan> = Vec::new();
    let mut open: Option<usize> = None;
    let mut pos = 0;
    let label = CATEGORIES[i % CATEGORIES.len()];
    for (k, (word, fabricated)) in words.iter().enumerate() {
        if k > 0 {
            answer.push(' ');
            pos += 1;
        }
        let len = word.chars().count();
        match (open, *fabricated) {
            (None, true) => open = Some(pos),
            (Some(start), false) => {
                labels.push(AnnotatedSpan::new(start, pos - 1, label));
                open = None;
            }
            _ => {}
        }
        answer.push_str(word);
        pos += len;
    }
    if let Some(start) = open {
        labels.push(AnnotatedSpan::new(start, pos, label));
    }
    answer.push('.');
    let labels = labels
        .into_iter()
        .map(|s| {
            let text = crate::corpus::char_slice(&answer, s.start, s.end).to_string();
            s.with_text(text)
        })
        .collect();

    RagRecord {
        id: format!("synthetic-{i:05}"),
        task_type,
        split: if i % 4 == 3 { Split::Test } else { Split::Train },
        language: config.language.clone(),
        prompt,
        answer,
        labels,
        source_model: None,
        extra: Map::new(),
    }
}
