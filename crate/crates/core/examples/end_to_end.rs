//! The whole pipeline on a synthetic corpus: translate (identity), label,
//! train, save, reload, predict and evaluate on the held-out split.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use std::num::NonZeroUsize;

use haldetect::align::{build_labels, Tokenizer, WordTokenizer};
use haldetect::corpus::Split;
use haldetect::detector::{predict, train, RecordPrediction, TokenClassifier, ToyEncoderConfig, TrainConfig};
use haldetect::metrics::{sliced_report, Level, Slice};
use haldetect::synthetic::{generate, SyntheticConfig};
use haldetect::tagproto::{translate_corpus, IdentityBackend, RetryPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = generate(&SyntheticConfig { records: 120, seed: 3, ..SyntheticConfig::default() });
    let translated = translate_corpus(&source, &IdentityBackend, "xx", RetryPolicy::default(), NonZeroUsize::new(8).unwrap());
    assert!(translated.failures.is_empty());
    let corpus = translated.translated;

    let (train_set, test_set): (Vec<_>, Vec<_>) = corpus.into_iter().partition(|r| r.split == Split::Train);
    let tokenizer = WordTokenizer::fit(train_set.iter().flat_map(|r| [r.prompt.as_str(), r.answer.as_str()]), 1000, 12, true);

    let max_len = 128;
    let labeled = train_set
        .iter()
        .map(|r| build_labels(r, &tokenizer, max_len).map(|s| s.to_labeled()))
        .collect::<Result<Vec<_>, _>>()?;
    let config = TrainConfig { epochs: 20, learning_rate: 3e-3, batch_size: 8, max_len, seed: 11, ..TrainConfig::default() };
    let encoder = ToyEncoderConfig { hidden_size: 32, num_layers: 1, num_heads: 2, intermediate_size: 64, ..ToyEncoderConfig::new(tokenizer.vocab_size()) };
    let mut model = TokenClassifier::toy(encoder, max_len, tokenizer.fingerprint(), config.seed)?;
    let trace = train(&mut model, &labeled, &config, tokenizer.pad_id())?;
    println!("train: {} sequences, final loss {:.4}", labeled.len(), trace.0.last().unwrap());

    let dir = std::env::temp_dir().join("haldetect-end-to-end");
    model.save(&dir)?;
    let model = TokenClassifier::load(&dir)?;

    let sequences = test_set
        .iter()
        .map(|r| build_labels(r, &tokenizer, max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = model.manifest().threshold_default;
    let predictions: Vec<RecordPrediction> = predict(&model, &sequences, 8, tokenizer.pad_id())?
        .iter()
        .map(|p| RecordPrediction::new(p, threshold))
        .collect();

    let report = sliced_report(&test_set, &predictions, threshold)?;
    for slice in Slice::ALL {
        if let Some(r) = report.get(Level::Token, slice) {
            println!("test {:<8} token F1 {}  AUROC {}", slice.as_str(), r.class_1.f1, r.auroc);
        }
    }
    Ok(())
}
