//! Fit a tokenizer, pack records as `[CLS] prompt [SEP] answer [SEP]`, and
//! show which answer tokens are labeled hallucinated.
//!
//! ```bash
//! cargo run --example build_labels
//! ```

use haldetect::align::{build_labels, labels_to_spans, length_stats, Segment, TokenLabel, Tokenizer, WordTokenizer};
use haldetect::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig::default());
    let tokenizer = WordTokenizer::fit(corpus.iter().flat_map(|r| [r.prompt.as_str(), r.answer.as_str()]), 500, 12, true);
    println!("tokenizer {} with {} entries", tokenizer.fingerprint(), tokenizer.vocab_size());
    println!("packed lengths: {:?}", length_stats(&corpus, &tokenizer)?);

    let record = corpus.iter().find(|r| r.labels.len() > 1).unwrap_or(&corpus[0]);
    // A tight max_len forces the prompt to be cut; the answer always survives.
    let seq = build_labels(record, &tokenizer, 24)?;
    println!("\n{} (prompt truncated: {})", seq.id, seq.truncated);
    for (tok, label) in seq.tokens.iter().zip(&seq.labels) {
        let text = match tok.segment {
            Segment::Prompt => haldetect::corpus::char_slice(&record.prompt, tok.char_start, tok.char_end),
            Segment::Answer => haldetect::corpus::char_slice(&record.answer, tok.char_start, tok.char_end),
            Segment::Special => tokenizer.token_str(tok.id).unwrap_or("?"),
        };
        let mark = match label {
            TokenLabel::Ignore => "  -100",
            TokenLabel::Supported => "     0",
            TokenLabel::Hallucinated => "     1",
        };
        println!("{mark}  {text}");
    }

    let spans = labels_to_spans(&seq, &seq.answer_values())?;
    println!("\ngold spans:      {:?}", record.labels.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>());
    println!("from token labels: {:?}", spans.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>());
    Ok(())
}
