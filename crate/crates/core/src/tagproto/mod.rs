//! Annotation-preserving translation.
//!
//! Hallucinated spans of an answer are wrapped in `<HAL>`…`</HAL>` markers
//! before the answer goes to a translator, and recovered from the markers in
//! the translated text afterwards. A translation is accepted only if it carries
//! exactly as many well-formed marker pairs as the source.

mod backend;
mod translate;

pub use backend::{
    BackendError, CommandBackend, HttpBackend, HttpBackendConfig, IdentityBackend,
    TranslationBackend,
};
pub use translate::{
    translate_corpus, translate_record, translate_text, CorpusTranslation, FailureKind,
    RetryPolicy, TextKind, TranslateError, TranslationFailure, TranslationOutcome,
    TranslationRequest, DEFAULT_PARALLELISM,
};

use crate::corpus::AnnotatedSpan;

pub const OPEN_TAG: &str = "<HAL>";
pub const CLOSE_TAG: &str = "</HAL>";

/// A named, versioned instruction template with `{source_lang}` and
/// `{target_lang}` placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub version: u32,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn render(&self, source_lang: &str, target_lang: &str) -> String {
        self.text
            .replace("{source_lang}", source_lang)
            .replace("{target_lang}", target_lang)
    }
}

/// Instruction sent with every answer and prompt translation request.
pub const CORE_TRANSLATION_PROMPT: PromptTemplate = PromptTemplate {
    name: "core-translation",
    version: 1,
    text: "Translate the following text from {source_lang} to {target_lang}. If the original text contains <HAL> tags, translate the content inside <HAL> tags and ensure the number of the <HAL> tags remain exactly the same in the output. If the original text does not contain <HAL> tags, just translate the text. Do NOT add any <HAL> tags if they were not in the original text. Do NOT remove any <HAL> tags that were in the original text. Do not include any additional sentences summarizing or explaining the translation. Your output should be just the translated text, nothing else.",
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("span {index} ({start}, {end}) is unsorted, overlapping, empty or out of bounds; normalize spans first")]
    BadSpan {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("source text already contains a marker at char {position}")]
    MarkerInSource { position: usize },
    #[error("close marker without open marker at char {position}")]
    UnexpectedClose { position: usize },
    #[error("nested open marker at char {position}")]
    NestedOpen { position: usize },
    #[error("open marker at char {position} is never closed")]
    Unclosed { position: usize },
    #[error("empty marker pair at char {position}")]
    EmptyPair { position: usize },
}

impl TagError {
    /// Char offset into the tagged text where the problem was found, for
    /// malformed-marker errors.
    pub fn position(&self) -> Option<usize> {
        match self {
            TagError::BadSpan { .. } => None,
            TagError::MarkerInSource { position }
            | TagError::UnexpectedClose { position }
            | TagError::NestedOpen { position }
            | TagError::Unclosed { position }
            | TagError::EmptyPair { position } => Some(*position),
        }
    }
}

/// Text with well-formed, non-nested, non-empty marker pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedText {
    text: String,
    pair_count: usize,
}

impl TaggedText {
    /// Parses `text`, checking that markers alternate open/close starting with open.
    pub fn parse(text: impl Into<String>) -> Result<Self, TagError> {
        let text = text.into();
        let (_, spans) = decode(&text)?;
        Ok(Self {
            pair_count: spans.len(),
            text,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    /// Stripped text and the char intervals the markers delimited in it.
    pub fn extract(&self) -> (String, Vec<AnnotatedSpan>) {
        decode(&self.text).expect("TaggedText is validated on construction")
    }
}

impl std::fmt::Display for TaggedText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Open,
    Close,
}

/// Splits text into runs of plain text and markers, with each piece's char offset.
fn pieces(text: &str) -> Vec<(usize, Piece<'_>)> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut char_pos = 0;
    while !rest.is_empty() {
        let next = rest.find('<').and_then(|i| {
            let tail = &rest[i..];
            if tail.starts_with(OPEN_TAG) {
                Some((i, Piece::Open, OPEN_TAG.len()))
            } else if tail.starts_with(CLOSE_TAG) {
                Some((i, Piece::Close, CLOSE_TAG.len()))
            } else {
                None
            }
        });
        match next {
            Some((i, marker, len)) => {
                if i > 0 {
                    out.push((char_pos, Piece::Text(&rest[..i])));
                    char_pos += rest[..i].chars().count();
                }
                out.push((char_pos, marker));
                char_pos += len;
                rest = &rest[i + len..];
            }
            None => {
                // a '<' that starts no marker: emit through it and keep scanning
                let cut = rest.find('<').map(|i| i + 1).unwrap_or(rest.len());
                out.push((char_pos, Piece::Text(&rest[..cut])));
                char_pos += rest[..cut].chars().count();
                rest = &rest[cut..];
            }
        }
    }
    out
}

fn decode(text: &str) -> Result<(String, Vec<AnnotatedSpan>), TagError> {
    let mut plain = String::with_capacity(text.len());
    let mut plain_len = 0usize;
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (tagged position, plain start)
    for (position, piece) in pieces(text) {
        match piece {
            Piece::Text(t) => {
                plain.push_str(t);
                plain_len += t.chars().count();
            }
            Piece::Open => {
                if open.is_some() {
                    return Err(TagError::NestedOpen { position });
                }
                open = Some((position, plain_len));
            }
            Piece::Close => match open.take() {
                None => return Err(TagError::UnexpectedClose { position }),
                Some((open_pos, start)) => {
                    if start == plain_len {
                        return Err(TagError::EmptyPair { position: open_pos });
                    }
                    spans.push(AnnotatedSpan::hallucinated(start, plain_len));
                }
            },
        }
    }
    if let Some((position, _)) = open {
        return Err(TagError::Unclosed { position });
    }
    Ok((plain, spans))
}

/// Wraps each span of `answer` in a marker pair.
///
/// Spans must be sorted, non-overlapping, non-empty and within the answer.
/// Touching spans produce adjacent pairs (`…</HAL><HAL>…`).
pub fn inject_tags(answer: &str, spans: &[AnnotatedSpan]) -> Result<TaggedText, TagError> {
    if let Some(position) = pieces(answer).iter().find_map(|(pos, p)| match p {
        Piece::Open | Piece::Close => Some(*pos),
        Piece::Text(_) => None,
    }) {
        return Err(TagError::MarkerInSource { position });
    }
    let len = answer.chars().count();
    let mut prev_end = 0;
    for (index, span) in spans.iter().enumerate() {
        if span.start >= span.end || span.end > len || span.start < prev_end {
            return Err(TagError::BadSpan {
                index,
                start: span.start,
                end: span.end,
            });
        }
        prev_end = span.end;
    }

    let mut out = String::with_capacity(answer.len() + spans.len() * (OPEN_TAG.len() + CLOSE_TAG.len()));
    let mut boundaries = spans.iter().flat_map(|s| [(s.start, OPEN_TAG), (s.end, CLOSE_TAG)]).peekable();
    for (pos, ch) in answer.chars().enumerate() {
        while let Some((_, tag)) = boundaries.next_if(|(at, _)| *at == pos) {
            out.push_str(tag);
        }
        out.push(ch);
    }
    for (_, tag) in boundaries {
        out.push_str(tag);
    }
    Ok(TaggedText {
        text: out,
        pair_count: spans.len(),
    })
}

/// True iff `candidate` holds exactly `expected_pairs` well-formed marker pairs
/// and no stray markers.
pub fn validate_tags(candidate: &str, expected_pairs: usize) -> bool {
    matches!(TaggedText::parse(candidate), Ok(t) if t.pair_count() == expected_pairs)
}

/// Strips markers from `tagged`, returning the plain text and the spans the
/// markers delimited, in plain-text char offsets.
pub fn extract_spans(tagged: &str) -> Result<(String, Vec<AnnotatedSpan>), TagError> {
    decode(tagged)
}
