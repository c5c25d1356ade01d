//! Load, validate, normalize and re-save a JSONL corpus.
//!
//! ```bash
//! cargo run --example corpus_io            # writes a synthetic corpus to a temp dir
//! cargo run --example corpus_io -- my.jsonl
//! ```

use haldetect::corpus::{load_corpus, normalize_spans, save_corpus, to_binary, TaskType};
use haldetect::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let path = std::env::temp_dir().join("haldetect-corpus-io.jsonl");
            save_corpus(&generate(&SyntheticConfig::default()), &path)?;
            path
        }
    };

    let records = load_corpus(&path)?;
    println!("{} records from {}", records.len(), path.display());
    for task in TaskType::ALL {
        let n = records.iter().filter(|r| r.task_type == task).count();
        let flagged = records.iter().filter(|r| r.task_type == task && r.has_hallucination()).count();
        println!("  {:<8} {n:>5} records, {flagged:>5} with hallucinations", task.as_str());
    }

    let first = &records[0];
    println!("\n{}: {:?}", first.id, first.answer);
    for span in normalize_spans(&first.labels) {
        let text = haldetect::corpus::char_slice(&first.answer, span.start, span.end);
        println!("  [{}, {}) {:<20} {text:?}", span.start, span.end, span.label);
    }

    // Collapse the four categories into a single binary label and save.
    let binary: Vec<_> = records.iter().map(to_binary).collect();
    let out = path.with_extension("binary.jsonl");
    save_corpus(&binary, &out)?;
    println!("\nbinary-labelled copy -> {}", out.display());
    Ok(())
}
