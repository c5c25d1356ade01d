//! Overfit the toy encoder on a small synthetic corpus and report token F1.
//!
//! ```bash
//! cargo run --release --example train_toy_detector
//! ```

use haldetect::align::{build_labels, Tokenizer, WordTokenizer};
use haldetect::detector::{predict, train, RecordPrediction, TokenClassifier, ToyEncoderConfig, TrainConfig};
use haldetect::metrics::{token_metrics, gold_token_labels};
use haldetect::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig { records: 48, seed: 1, ..SyntheticConfig::default() });
    let tokenizer = WordTokenizer::fit(corpus.iter().flat_map(|r| [r.prompt.as_str(), r.answer.as_str()]), 1000, 12, true);

    let max_len = 128;
    let sequences = corpus
        .iter()
        .map(|r| build_labels(r, &tokenizer, max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let labeled: Vec<_> = sequences.iter().map(|s| s.to_labeled()).collect();

    // Far more aggressive than the default recipe: the goal is to memorize.
    let config = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        batch_size: 8,
        max_len,
        seed: 7,
        ..TrainConfig::default()
    };
    let encoder = ToyEncoderConfig { hidden_size: 32, num_layers: 1, num_heads: 2, intermediate_size: 64, ..ToyEncoderConfig::new(tokenizer.vocab_size()) };
    let mut model = TokenClassifier::toy(encoder, max_len, tokenizer.fingerprint(), config.seed)?;
    let started = std::time::Instant::now();
    let trace = train(&mut model, &labeled, &config, tokenizer.pad_id())?;
    println!("epoch losses: {:?}", trace.0.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>());
    println!("trained in {:.1?}", started.elapsed());

    let scored = predict(&model, &sequences, 16, tokenizer.pad_id())?;
    let (mut gold, mut probs) = (Vec::new(), Vec::new());
    for (record, p) in corpus.iter().zip(&scored) {
        let line = RecordPrediction::new(p, 0.5);
        gold.extend(gold_token_labels(record, &line)?);
        probs.extend(line.tokens.iter().map(|t| t.prob));
    }
    let report = token_metrics(&gold, &probs, 0.5)?;
    println!("token-level hallucinated F1 on the training data: {}", report.class_1.f1);
    Ok(())
}
