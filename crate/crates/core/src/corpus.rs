//! Span-annotated RAG records and their JSONL serialization.
//!
//! One record per line:
//!
//! ```text
//! {"id": "...", "task_type": "QA"|"Data2txt"|"Summary", "split": "train"|"test",
//!  "language": "tr", "prompt": "...", "answer": "...",
//!  "labels": [{"start": 545, "end": 596, "label": "Evident Conflict"}],
//!  "source_model": "..."}
//! ```
//!
//! Span offsets count Unicode scalar values (chars) of `answer`, never bytes.
//! Unknown top-level and span-level fields are kept and written back on save.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Binary label every span carries after [`to_binary`].
pub const HALLUCINATED: &str = "hallucinated";

/// The four annotated hallucination categories.
pub const CATEGORIES: [&str; 4] = [
    "Evident Conflict",
    "Subtle Conflict",
    "Evident Baseless Info",
    "Subtle Baseless Info",
];

/// Whether `label` is one of the four categories or the binary marker.
pub fn is_known_label(label: &str) -> bool {
    label == HALLUCINATED || CATEGORIES.contains(&label)
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record {id:?}: {source}")]
    Invalid {
        line: usize,
        id: String,
        #[source]
        source: RecordError,
    },
}

/// Why a record fails validation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("span {index} ({start}, {end}) out of bounds for answer of {len} chars")]
    SpanOutOfBounds {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("span {index} ({start}, {end}) text {text:?} does not match answer substring {actual:?}")]
    SpanTextMismatch {
        index: usize,
        start: usize,
        end: usize,
        text: String,
        actual: String,
    },
    #[error("span {index} has unknown label {label:?}")]
    UnknownLabel { index: usize, label: String },
    #[error("empty record id")]
    EmptyId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    QA,
    Data2txt,
    Summary,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::Summary, TaskType::Data2txt, TaskType::QA];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::QA => "QA",
            TaskType::Data2txt => "Data2txt",
            TaskType::Summary => "Summary",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A half-open `[start, end)` character interval of an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSpan {
    pub start: usize,
    pub end: usize,
    #[serde(alias = "type")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl AnnotatedSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
            text: None,
            extra: Map::new(),
        }
    }

    pub fn hallucinated(start: usize, end: usize) -> Self {
        Self::new(start, end, HALLUCINATED)
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// One annotated RAG instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagRecord {
    pub id: String,
    pub task_type: TaskType,
    pub split: Split,
    pub language: String,
    pub prompt: String,
    pub answer: String,
    pub labels: Vec<AnnotatedSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl RagRecord {
    /// Answer length in chars.
    pub fn answer_len(&self) -> usize {
        self.answer.chars().count()
    }

    /// Checks every span against this record's answer.
    ///
    /// Unknown labels are only an error when `strict` is set.
    pub fn validate(&self, strict: bool) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        let len = self.answer_len();
        for (index, span) in self.labels.iter().enumerate() {
            if span.start >= span.end || span.end > len {
                return Err(RecordError::SpanOutOfBounds {
                    index,
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
            if let Some(text) = &span.text {
                let actual = char_slice(&self.answer, span.start, span.end);
                if actual != text {
                    return Err(RecordError::SpanTextMismatch {
                        index,
                        start: span.start,
                        end: span.end,
                        text: text.clone(),
                        actual: actual.to_string(),
                    });
                }
            }
            if strict && !is_known_label(&span.label) {
                return Err(RecordError::UnknownLabel {
                    index,
                    label: span.label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Copy of this record with spans passed through [`normalize_spans`].
    pub fn normalized(&self) -> RagRecord {
        RagRecord {
            labels: normalize_spans(&self.labels),
            ..self.clone()
        }
    }

    pub fn has_hallucination(&self) -> bool {
        !self.labels.is_empty()
    }
}

/// Byte-safe substring by char positions. Out-of-range positions clamp to the end.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte_at = |pos: usize| {
        text.char_indices()
            .nth(pos)
            .map(|(b, _)| b)
            .unwrap_or(text.len())
    };
    let s = byte_at(start);
    let e = byte_at(end).max(s);
    &text[s..e]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject spans whose label is neither a known category nor `"hallucinated"`.
    pub strict_labels: bool,
}

/// Reads a JSONL corpus, validating each record. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RagRecord>, CorpusError> {
    load_corpus_with(path, LoadOptions::default())
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<Vec<RagRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(BufReader::new(file), options).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(
    reader: R,
    options: LoadOptions,
) -> Result<Vec<RagRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RagRecord = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            line: line_no,
            source,
        })?;
        record
            .validate(options.strict_labels)
            .map_err(|source| CorpusError::Invalid {
                line: line_no,
                id: record.id.clone(),
                source,
            })?;
        for span in record.labels.iter().filter(|s| !is_known_label(&s.label)) {
            log::warn!(
                "record {:?}: unknown span label {:?} accepted",
                record.id,
                span.label
            );
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes one JSON object per line. Newlines inside strings are escaped by the encoder.
pub fn save_corpus(records: &[RagRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    write_corpus(&mut out, records).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn write_corpus<W: Write>(out: &mut W, records: &[RagRecord]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Sorts spans by start and merges overlapping ones.
///
/// A merged span covers the union of its constituents and keeps the label and
/// extra fields of the earliest-starting one; its `text` is dropped because the
/// union no longer matches any single constituent. Touching spans such as
/// `(5, 8)` and `(8, 10)` share no character and stay separate.
pub fn normalize_spans(spans: &[AnnotatedSpan]) -> Vec<AnnotatedSpan> {
    let mut sorted: Vec<&AnnotatedSpan> = spans.iter().filter(|s| !s.is_empty()).collect();
    sorted.sort_by_key(|s| (s.start, s.end));

    let mut out: Vec<AnnotatedSpan> = Vec::with_capacity(sorted.len());
    for span in sorted {
        match out.last_mut() {
            // a span contained in `last` changes nothing, text included
            Some(last) if span.start < last.end => {
                if span.end > last.end {
                    last.end = span.end;
                    last.text = None;
                }
            }
            _ => out.push(span.clone()),
        }
    }
    out
}

/// Replaces every span label with [`HALLUCINATED`]. Offsets and all other fields stay.
pub fn to_binary(record: &RagRecord) -> RagRecord {
    let mut out = record.clone();
    for span in &mut out.labels {
        span.label = HALLUCINATED.to_string();
    }
    out
}
