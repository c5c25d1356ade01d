//! Token- and example-level metrics sliced by task type, from hand-made
//! predictions, written as JSON and CSV.
//!
//! ```bash
//! cargo run --example evaluate
//! ```

use haldetect::detector::{RecordPrediction, ScoredToken};
use haldetect::metrics::{sliced_report, Level, Slice};
use haldetect::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig { records: 30, ..SyntheticConfig::default() });

    // A noisy oracle: one token per whitespace word, probability 0.8 inside
    // gold spans and 0.3 outside, with every fifth word flipped.
    let predictions: Vec<RecordPrediction> = corpus
        .iter()
        .map(|r| {
            let mut tokens = Vec::new();
            let mut start = 0;
            for (k, word) in r.answer.split(' ').enumerate() {
                let end = start + word.chars().count();
                let gold = r.labels.iter().any(|s| s.start < end && start < s.end);
                let prob = if gold ^ (k % 5 == 4) { 0.8 } else { 0.3 };
                tokens.push(ScoredToken { start, end, prob });
                start = end + 1;
            }
            RecordPrediction { id: r.id.clone(), spans: Vec::new(), tokens }.rethreshold(0.5)
        })
        .collect();

    let report = sliced_report(&corpus, &predictions, 0.5)?;
    for level in [Level::Token, Level::Example] {
        for slice in Slice::ALL {
            if let Some(r) = report.get(level, slice) {
                println!(
                    "{:<7} {:<8} P {} R {} F1 {} AUROC {}",
                    level.as_str(),
                    slice.as_str(),
                    r.class_1.p,
                    r.class_1.r,
                    r.class_1.f1,
                    r.auroc
                );
            }
        }
    }

    let dir = std::env::temp_dir().join("haldetect-evaluate");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    report.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
    println!("\nreport.json and report.csv -> {}", dir.display());
    Ok(())
}
