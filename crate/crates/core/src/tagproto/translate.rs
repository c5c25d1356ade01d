use std::num::NonZeroUsize;

use rayon::prelude::*;

use super::backend::{instruction_for, BackendError, TranslationBackend};
use super::{inject_tags, TagError, TaggedText};
use crate::corpus::{char_slice, normalize_spans, AnnotatedSpan, RagRecord};

/// In-flight backend calls used by [`translate_corpus`] when the caller has no preference.
pub const DEFAULT_PARALLELISM: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextKind {
    Answer,
    Prompt,
}

impl TextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TextKind::Answer => "answer",
            TextKind::Prompt => "prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRequest {
    pub text: String,
    pub source_lang: String,
    pub target_lang: String,
    pub kind: TextKind,
    /// Marker pairs the translation must carry; `None` skips the check.
    pub expected_pairs: Option<usize>,
}

impl TranslationRequest {
    /// Builds a request, counting the marker pairs already present in `text`.
    pub fn new(
        text: impl Into<String>,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
        kind: TextKind,
    ) -> Result<Self, String> {
        let text = text.into();
        let (source_lang, target_lang) = (source_lang.into(), target_lang.into());
        if source_lang == target_lang {
            return Err(format!("source and target language are both {source_lang:?}"));
        }
        let expected_pairs = TaggedText::parse(text.as_str()).ok().map(|t| t.pair_count());
        Ok(Self {
            text,
            source_lang,
            target_lang,
            kind,
            expected_pairs,
        })
    }

    /// The rendered translation instruction for this language pair.
    pub fn instruction(&self) -> String {
        instruction_for(&self.source_lang, &self.target_lang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total backend calls per text before the record is failed.
    pub max_attempts: NonZeroUsize,
}

impl RetryPolicy {
    pub fn new(max_attempts: usize) -> Option<Self> {
        NonZeroUsize::new(max_attempts).map(|max_attempts| Self { max_attempts })
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self::new(3).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationOutcome {
    pub translated: String,
    pub attempts: usize,
    pub valid: bool,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranslateError {
    #[error("record {id}: {reason}")]
    InvalidRequest { id: String, reason: String },
    #[error("record {id}: cannot tag source answer: {source}")]
    Source {
        id: String,
        #[source]
        source: TagError,
    },
    #[error("record {id}: backend failure: {source}")]
    Transport {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("record {id}: {} translation broke the marker invariant after {attempts} attempt(s): {reason}", kind.as_str())]
    TagProtocol {
        id: String,
        kind: TextKind,
        attempts: usize,
        reason: String,
    },
}

impl TranslateError {
    pub fn id(&self) -> &str {
        match self {
            TranslateError::InvalidRequest { id, .. }
            | TranslateError::Source { id, .. }
            | TranslateError::Transport { id, .. }
            | TranslateError::TagProtocol { id, .. } => id,
        }
    }

    pub fn kind(&self) -> FailureKind {
        match self {
            TranslateError::InvalidRequest { .. } | TranslateError::Source { .. } => {
                FailureKind::InvalidInput
            }
            TranslateError::Transport { .. } => FailureKind::Transport,
            TranslateError::TagProtocol { .. } => FailureKind::TagProtocol,
        }
    }
}

fn tag_problem(candidate: &str, expected: usize) -> Option<String> {
    match TaggedText::parse(candidate) {
        Err(e) => Some(e.to_string()),
        Ok(t) if t.pair_count() != expected => Some(format!(
            "expected {expected} marker pair(s), found {}",
            t.pair_count()
        )),
        Ok(_) => None,
    }
}

/// Sends `request` until the output satisfies the marker invariant or the
/// policy's attempts run out. Backend errors end the loop immediately.
pub fn translate_text<B: TranslationBackend + ?Sized>(
    backend: &B,
    request: &TranslationRequest,
    policy: RetryPolicy,
) -> Result<TranslationOutcome, BackendError> {
    let mut last_reason = None;
    let mut last_output = String::new();
    for attempt in 1..=policy.max_attempts.get() {
        let output = backend.translate(request)?;
        let problem = request
            .expected_pairs
            .and_then(|expected| tag_problem(&output, expected));
        match problem {
            None => {
                return Ok(TranslationOutcome {
                    translated: output,
                    attempts: attempt,
                    valid: true,
                    failure_reason: None,
                })
            }
            Some(reason) => {
                log::debug!("{} attempt {attempt} rejected: {reason}", request.kind.as_str());
                last_reason = Some(reason);
                last_output = output;
            }
        }
    }
    Ok(TranslationOutcome {
        translated: last_output,
        attempts: policy.max_attempts.get(),
        valid: false,
        failure_reason: last_reason,
    })
}

/// Translates a record's prompt and answer into `target_lang`.
///
/// The answer's spans are injected as markers, translated, checked and
/// re-extracted. The k-th recovered span keeps the label and extra fields of
/// the k-th normalized source span; `text` is refreshed from the translated
/// answer when the source span had one.
pub fn translate_record<B: TranslationBackend + ?Sized>(
    record: &RagRecord,
    backend: &B,
    target_lang: &str,
    policy: RetryPolicy,
) -> Result<RagRecord, TranslateError> {
    let id = || record.id.clone();
    let source_spans = normalize_spans(&record.labels);
    let tagged = inject_tags(&record.answer, &source_spans)
        .map_err(|source| TranslateError::Source { id: id(), source })?;

    let prompt = translate_part(record, backend, target_lang, policy, record.prompt.clone(), TextKind::Prompt)?;
    let answer = translate_part(record, backend, target_lang, policy, tagged.into_string(), TextKind::Answer)?;

    let (answer, recovered) = super::extract_spans(&answer).map_err(|e| TranslateError::TagProtocol {
        id: id(),
        kind: TextKind::Answer,
        attempts: 0,
        reason: e.to_string(),
    })?;
    let labels = recovered
        .into_iter()
        .zip(&source_spans)
        .map(|(span, source)| AnnotatedSpan {
            text: source
                .text
                .as_ref()
                .map(|_| char_slice(&answer, span.start, span.end).to_string()),
            label: source.label.clone(),
            extra: source.extra.clone(),
            ..span
        })
        .collect();

    Ok(RagRecord {
        prompt,
        answer,
        labels,
        language: target_lang.to_string(),
        ..record.clone()
    })
}

fn translate_part<B: TranslationBackend + ?Sized>(
    record: &RagRecord,
    backend: &B,
    target_lang: &str,
    policy: RetryPolicy,
    text: String,
    kind: TextKind,
) -> Result<String, TranslateError> {
    let request = TranslationRequest::new(text, record.language.as_str(), target_lang, kind)
        .map_err(|reason| TranslateError::InvalidRequest {
            id: record.id.clone(),
            reason,
        })?;
    let outcome = translate_text(backend, &request, policy).map_err(|source| {
        TranslateError::Transport {
            id: record.id.clone(),
            source,
        }
    })?;
    if outcome.valid {
        Ok(outcome.translated)
    } else {
        Err(TranslateError::TagProtocol {
            id: record.id.clone(),
            kind,
            attempts: outcome.attempts,
            reason: outcome.failure_reason.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    InvalidInput,
    Transport,
    TagProtocol,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct TranslationFailure {
    pub id: String,
    pub kind: FailureKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusTranslation {
    pub translated: Vec<RagRecord>,
    pub failures: Vec<TranslationFailure>,
}

/// Translates every record with at most `parallelism` concurrent backend calls.
///
/// Each input ends up in exactly one of `translated` or `failures`; both keep
/// input order.
pub fn translate_corpus<B: TranslationBackend + ?Sized>(
    records: &[RagRecord],
    backend: &B,
    target_lang: &str,
    policy: RetryPolicy,
    parallelism: NonZeroUsize,
) -> CorpusTranslation {
    let run = || -> Vec<Result<RagRecord, TranslateError>> {
        records
            .par_iter()
            .map(|r| translate_record(r, backend, target_lang, policy))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.get())
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("cannot start translation pool ({e}); translating sequentially");
            records
                .iter()
                .map(|r| translate_record(r, backend, target_lang, policy))
                .collect()
        }
    };

    let mut out = CorpusTranslation::default();
    for result in results {
        match result {
            Ok(record) => out.translated.push(record),
            Err(err) => {
                log::warn!("{err}");
                out.failures.push(TranslationFailure {
                    id: err.id().to_string(),
                    kind: err.kind(),
                    reason: err.to_string(),
                });
            }
        }
    }
    out
}
