//! Character spans to per-token labels and back.
//!
//! A record is packed as `[CLS] prompt [SEP] answer [SEP]`. Only answer tokens
//! are supervised: a token is hallucinated when its char interval shares at
//! least one char with a gold span. Everything else carries the ignore label.

mod tokenizer;

pub use tokenizer::{RawToken, Tokenizer, TokenizerError, WordTokenizer, CLS, PAD, SEP, UNK};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, normalize_spans, AnnotatedSpan, RagRecord};

/// Label value excluded from the loss.
pub const IGNORE_INDEX: i64 = -100;

/// Special tokens added by packing: `[CLS]`, the middle `[SEP]`, the final `[SEP]`.
pub const PACKING_OVERHEAD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Prompt,
    Answer,
    Special,
}

/// A token of the packed sequence; offsets index into its segment's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetToken {
    pub index: usize,
    pub id: u32,
    pub char_start: usize,
    pub char_end: usize,
    pub segment: Segment,
    pub is_special: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenLabel {
    Ignore,
    Supported,
    Hallucinated,
}

impl TokenLabel {
    pub fn value(self) -> i64 {
        match self {
            TokenLabel::Ignore => IGNORE_INDEX,
            TokenLabel::Supported => 0,
            TokenLabel::Hallucinated => 1,
        }
    }

    pub fn from_value(value: i64) -> Option<Self> {
        match value {
            IGNORE_INDEX => Some(TokenLabel::Ignore),
            0 => Some(TokenLabel::Supported),
            1 => Some(TokenLabel::Hallucinated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignError {
    #[error("max_len {max_len} is below the packing overhead of {PACKING_OVERHEAD} tokens")]
    MaxLenTooSmall { max_len: usize },
    #[error("record {id}: answer needs {needed} tokens with specials, max_len is {max_len}")]
    Unencodable {
        id: String,
        needed: usize,
        max_len: usize,
    },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Tokens and labels of one packed (prompt, answer) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLabelSequence {
    pub id: String,
    pub tokens: Vec<OffsetToken>,
    pub labels: Vec<TokenLabel>,
    /// Token indices of the answer segment (between the two `[SEP]`s).
    pub answer_range: Range<usize>,
    pub truncated: bool,
}

impl TokenLabelSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn input_ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn label_values(&self) -> Vec<i64> {
        self.labels.iter().map(|l| l.value()).collect()
    }

    pub fn answer_tokens(&self) -> &[OffsetToken] {
        &self.tokens[self.answer_range.clone()]
    }

    /// Gold 0/1 values parallel to [`answer_tokens`](Self::answer_tokens);
    /// special tokens report 0.
    pub fn answer_values(&self) -> Vec<u8> {
        self.labels[self.answer_range.clone()]
            .iter()
            .map(|l| u8::from(*l == TokenLabel::Hallucinated))
            .collect()
    }

    pub fn to_labeled(&self) -> LabeledSequence {
        LabeledSequence {
            id: self.id.clone(),
            input_ids: self.input_ids(),
            labels: self.label_values(),
        }
    }
}

/// One line of an exported label file: `{"id", "input_ids", "labels"}` with
/// labels in {-100, 0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub input_ids: Vec<u32>,
    pub labels: Vec<i64>,
}

impl LabeledSequence {
    pub fn supervised_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0 || l == 1).count()
    }
}

/// Hallucination flag per token: true iff `[start, end)` shares a char with a span.
///
/// `spans` must be sorted and non-overlapping; tokens must be ordered by start.
pub fn overlap_flags(offsets: &[(usize, usize)], spans: &[AnnotatedSpan]) -> Vec<bool> {
    let mut flags = Vec::with_capacity(offsets.len());
    let mut first = 0;
    for &(start, end) in offsets {
        while first < spans.len() && spans[first].end <= start {
            first += 1;
        }
        let hit = spans[first..]
            .iter()
            .take_while(|s| s.start < end)
            .any(|s| s.overlaps(start, end));
        flags.push(hit);
    }
    flags
}

fn is_blank(answer: &str, span: &AnnotatedSpan) -> bool {
    char_slice(answer, span.start, span.end).trim().is_empty()
}

/// Packs and labels one record.
///
/// Spans are normalized first and whitespace-only spans are dropped. When the
/// packed sequence exceeds `max_len`, trailing prompt tokens are dropped; the
/// answer is never cut.
pub fn build_labels<T: Tokenizer + ?Sized>(
    record: &RagRecord,
    tokenizer: &T,
    max_len: usize,
) -> Result<TokenLabelSequence, AlignError> {
    if max_len < PACKING_OVERHEAD {
        return Err(AlignError::MaxLenTooSmall { max_len });
    }
    let spans: Vec<AnnotatedSpan> = normalize_spans(&record.labels)
        .into_iter()
        .filter(|s| {
            let blank = is_blank(&record.answer, s);
            if blank {
                log::warn!(
                    "record {}: dropping whitespace-only span ({}, {})",
                    record.id,
                    s.start,
                    s.end
                );
            }
            !blank
        })
        .collect();

    let prompt = tokenizer.tokenize(&record.prompt);
    let answer = tokenizer.tokenize(&record.answer);
    let needed = answer.len() + PACKING_OVERHEAD;
    if needed > max_len {
        return Err(AlignError::Unencodable {
            id: record.id.clone(),
            needed,
            max_len,
        });
    }
    let keep = prompt.len().min(max_len - needed);
    let truncated = keep < prompt.len();

    let answer_offsets: Vec<(usize, usize)> = answer.iter().map(|t| (t.start, t.end)).collect();
    let flags = overlap_flags(&answer_offsets, &spans);

    let total = keep + needed;
    let mut tokens = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut push = |id: u32, start: usize, end: usize, segment: Segment, special: bool, label: TokenLabel| {
        tokens.push(OffsetToken {
            index: tokens.len(),
            id,
            char_start: start,
            char_end: end,
            segment,
            is_special: special,
        });
        labels.push(label);
    };

    push(tokenizer.cls_id(), 0, 0, Segment::Special, true, TokenLabel::Ignore);
    for t in &prompt[..keep] {
        push(t.id, t.start, t.end, Segment::Prompt, t.is_special, TokenLabel::Ignore);
    }
    let prompt_chars = record.prompt.chars().count();
    push(tokenizer.sep_id(), prompt_chars, prompt_chars, Segment::Special, true, TokenLabel::Ignore);
    let answer_start = keep + 2;
    for (t, hit) in answer.iter().zip(&flags) {
        let label = match (t.is_special, hit) {
            (true, _) => TokenLabel::Ignore,
            (false, true) => TokenLabel::Hallucinated,
            (false, false) => TokenLabel::Supported,
        };
        push(t.id, t.start, t.end, Segment::Answer, t.is_special, label);
    }
    let answer_end = answer_start + answer.len();
    let answer_chars = record.answer.chars().count();
    push(tokenizer.sep_id(), answer_chars, answer_chars, Segment::Special, true, TokenLabel::Ignore);

    Ok(TokenLabelSequence {
        id: record.id.clone(),
        tokens,
        labels,
        answer_range: answer_start..answer_end,
        truncated,
    })
}

/// Index ranges (into `tokens`) of maximal runs of flagged tokens.
///
/// Special tokens neither start nor break a run and are excluded from its ends.
pub fn flagged_runs(tokens: &[OffsetToken], flags: &[bool]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut current: Option<Range<usize>> = None;
    for (i, (token, &flag)) in tokens.iter().zip(flags).enumerate() {
        if token.is_special {
            continue;
        }
        match (&mut current, flag) {
            (Some(run), true) => run.end = i + 1,
            (None, true) => current = Some(i..i + 1),
            (Some(_), false) => runs.extend(current.take()),
            (None, false) => {}
        }
    }
    runs.extend(current);
    runs
}

/// Turns per-answer-token binary values into char spans over the answer.
///
/// Maximal runs of 1s become `[char_start of first, char_end of last)`.
pub fn labels_to_spans(
    seq: &TokenLabelSequence,
    values: &[u8],
) -> Result<Vec<AnnotatedSpan>, AlignError> {
    let tokens = seq.answer_tokens();
    if values.len() != tokens.len() {
        return Err(AlignError::LengthMismatch {
            expected: tokens.len(),
            got: values.len(),
        });
    }
    let flags: Vec<bool> = values.iter().map(|&v| v != 0).collect();
    Ok(flagged_runs(tokens, &flags)
        .into_iter()
        .map(|run| AnnotatedSpan::hallucinated(tokens[run.start].char_start, tokens[run.end - 1].char_end))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

/// Packed (prompt + answer + specials) token lengths, before any truncation.
pub fn length_stats<T: Tokenizer + ?Sized>(
    corpus: &[RagRecord],
    tokenizer: &T,
) -> Result<LengthStats, AlignError> {
    if corpus.is_empty() {
        return Err(AlignError::EmptyCorpus);
    }
    let mut lengths: Vec<usize> = corpus
        .iter()
        .map(|r| tokenizer.tokenize(&r.prompt).len() + tokenizer.tokenize(&r.answer).len() + PACKING_OVERHEAD)
        .collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    Ok(LengthStats {
        count: n,
        mean: lengths.iter().sum::<usize>() as f64 / n as f64,
        median,
        min: lengths[0],
        max: lengths[n - 1],
    })
}

pub fn write_label_file(path: impl AsRef<Path>, lines: &[LabeledSequence]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum LabelFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<LabeledSequence>, LabelFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: LabeledSequence = serde_json::from_str(&line).map_err(|source| LabelFileError::Parse {
            line: idx + 1,
            source,
        })?;
        if seq.input_ids.len() != seq.labels.len() {
            return Err(LabelFileError::Invalid {
                line: idx + 1,
                reason: format!("{} input ids but {} labels", seq.input_ids.len(), seq.labels.len()),
            });
        }
        if let Some(bad) = seq.labels.iter().find(|l| TokenLabel::from_value(**l).is_none()) {
            return Err(LabelFileError::Invalid {
                line: idx + 1,
                reason: format!("label {bad} is not -100, 0 or 1"),
            });
        }
        out.push(seq);
    }
    Ok(out)
}
