use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A token with half-open char offsets into the text it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawToken {
    pub id: u32,
    pub start: usize,
    pub end: usize,
    pub is_special: bool,
}

/// Anything that splits text into id'd tokens with char offsets.
///
/// Offsets of non-special tokens must be non-decreasing and non-overlapping.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<RawToken>;
    fn cls_id(&self) -> u32;
    fn sep_id(&self) -> u32;
    fn pad_id(&self) -> u32;
    fn vocab_size(&self) -> usize;
    /// Stable identifier of this tokenizer and its vocabulary; used to detect
    /// label files and models built with different tokenizers.
    fn fingerprint(&self) -> String;
}

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const KIND: &str = "word-v1";

/// Splits on Unicode word characters and punctuation, with long words cut into
/// fixed-width pieces. Ids come from a frequency-ranked vocabulary.
///
/// Runs of alphanumeric chars form words; every other non-whitespace char is a
/// token by itself; whitespace produces no token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTokenizer {
    kind: String,
    lowercase: bool,
    max_piece_chars: usize,
    /// Token strings in id order; the first four are the special tokens.
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("tokenizer file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported tokenizer kind {0:?}")]
    Kind(String),
    #[error("vocabulary must start with [PAD], [UNK], [CLS], [SEP]")]
    Specials,
}

impl WordTokenizer {
    /// Builds a vocabulary of at most `max_vocab` entries (specials included)
    /// from the pieces of `texts`. Ties in frequency break alphabetically.
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_vocab: usize,
        max_piece_chars: usize,
        lowercase: bool,
    ) -> Self {
        let max_piece_chars = max_piece_chars.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for (start, end) in pieces(text, max_piece_chars) {
                *counts.entry(normalize(slice(text, start, end), lowercase)).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        vocab.extend(
            ranked
                .into_iter()
                .map(|(piece, _)| piece)
                .filter(|p| ![PAD, UNK, CLS, SEP].contains(&p.as_str()))
                .take(max_vocab.saturating_sub(4)),
        );
        Self::from_vocab(vocab, max_piece_chars, lowercase)
    }

    fn from_vocab(vocab: Vec<String>, max_piece_chars: usize, lowercase: bool) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self {
            kind: KIND.to_string(),
            lowercase,
            max_piece_chars,
            vocab,
            index,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let raw: WordTokenizer = serde_json::from_str(text)?;
        if raw.kind != KIND {
            return Err(TokenizerError::Kind(raw.kind));
        }
        if raw.vocab.len() < 4 || raw.vocab[..4] != [PAD, UNK, CLS, SEP] {
            return Err(TokenizerError::Specials);
        }
        Ok(Self::from_vocab(raw.vocab, raw.max_piece_chars.max(1), raw.lowercase))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tokenizer serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }
}

fn normalize(piece: &str, lowercase: bool) -> String {
    if lowercase {
        piece.to_lowercase()
    } else {
        piece.to_string()
    }
}

fn slice(text: &str, start: usize, end: usize) -> &str {
    crate::corpus::char_slice(text, start, end)
}

/// Char intervals of the pieces of `text`.
fn pieces(text: &str, max_piece_chars: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |start: usize, end: usize, out: &mut Vec<(usize, usize)>| {
        let mut s = start;
        while s < end {
            let e = (s + max_piece_chars).min(end);
            out.push((s, e));
            s = e;
        }
    };
    let mut len = 0;
    for (i, ch) in text.chars().enumerate() {
        len = i + 1;
        if ch.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            flush(s, i, &mut out);
        }
        if !ch.is_whitespace() {
            out.push((i, i + 1));
        }
    }
    if let Some(s) = word_start {
        flush(s, len, &mut out);
    }
    out
}

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<RawToken> {
        let chars: Vec<char> = text.chars().collect();
        pieces(text, self.max_piece_chars)
            .into_iter()
            .map(|(start, end)| {
                let piece: String = chars[start..end].iter().collect();
                let id = self
                    .index
                    .get(&normalize(&piece, self.lowercase))
                    .copied()
                    .unwrap_or(1);
                RawToken {
                    id,
                    start,
                    end,
                    is_special: false,
                }
            })
            .collect()
    }

    fn cls_id(&self) -> u32 {
        2
    }

    fn sep_id(&self) -> u32 {
        3
    }

    fn pad_id(&self) -> u32 {
        0
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        format!("{KIND}:{}", &hex::encode(digest)[..16])
    }
}
