//! Translate a corpus through a pluggable backend with marker validation,
//! retries and bounded parallelism.
//!
//! The backend here is a stand-in that upper-cases text and, on the first
//! attempt for some records, drops a closing marker so the retry path runs.
//! Swap in `HttpBackend` (any OpenAI-compatible server) or `CommandBackend`
//! for real translation.
//!
//! ```bash
//! cargo run --example translate_corpus
//! ```

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::Mutex;

use haldetect::synthetic::{generate, SyntheticConfig};
use haldetect::tagproto::{
    translate_corpus, BackendError, RetryPolicy, TextKind, TranslationBackend, TranslationRequest, CLOSE_TAG,
};

/// Upper-cases text; the first answer call per text loses its first `</HAL>`.
#[derive(Default)]
struct Shouting {
    seen: Mutex<HashMap<String, usize>>,
}

impl TranslationBackend for Shouting {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        let mut seen = self.seen.lock().unwrap();
        let calls = seen.entry(request.text.clone()).or_default();
        *calls += 1;
        let out = request.text.replace("<HAL>", "\u{1}").replace(CLOSE_TAG, "\u{2}").to_uppercase();
        let out = out.replace('\u{1}', "<HAL>").replace('\u{2}', CLOSE_TAG);
        if request.kind == TextKind::Answer && *calls == 1 && request.expected_pairs.unwrap_or(0) > 0 {
            return Ok(out.replacen(CLOSE_TAG, "", 1));
        }
        Ok(out)
    }
}

fn main() {
    let corpus = generate(&SyntheticConfig { records: 12, ..SyntheticConfig::default() });
    let backend = Shouting::default();
    let result = translate_corpus(
        &corpus,
        &backend,
        "en-shout",
        RetryPolicy::default(),
        NonZeroUsize::new(4).unwrap(),
    );
    println!("{} translated, {} failed", result.translated.len(), result.failures.len());
    for (src, dst) in corpus.iter().zip(&result.translated).take(3) {
        println!("\n{}\n  {}\n  {}", src.id, src.answer, dst.answer);
        for s in &dst.labels {
            println!("    [{}, {}) {} {:?}", s.start, s.end, s.label, haldetect::corpus::char_slice(&dst.answer, s.start, s.end));
        }
    }
}
