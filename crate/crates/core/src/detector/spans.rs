use serde::{Deserialize, Serialize};

use crate::align::{flagged_runs, OffsetToken, Segment};

/// Per-answer-token hallucination probabilities of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPrediction {
    pub id: String,
    pub probs: Vec<f64>,
    pub offsets: Vec<OffsetToken>,
}

/// A detected span with the mean probability of its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

/// An answer token and its probability, as written to prediction files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub start: usize,
    pub end: usize,
    pub prob: f64,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub id: String,
    pub spans: Vec<PredictedSpan>,
    #[serde(default)]
    pub tokens: Vec<ScoredToken>,
}

impl RecordPrediction {
    pub fn new(prediction: &TokenPrediction, threshold: f64) -> Self {
        Self {
            id: prediction.id.clone(),
            spans: detect_spans(prediction, threshold),
            tokens: prediction
                .offsets
                .iter()
                .zip(&prediction.probs)
                .filter(|(t, _)| !t.is_special)
                .map(|(t, &prob)| ScoredToken {
                    start: t.char_start,
                    end: t.char_end,
                    prob,
                })
                .collect(),
        }
    }

    /// Re-derives `spans` from the stored token probabilities at `threshold`.
    /// Adjacent tokens in `tokens` count as consecutive.
    pub fn rethreshold(&self, threshold: f64) -> Self {
        let prediction = TokenPrediction {
            id: self.id.clone(),
            probs: self.tokens.iter().map(|t| t.prob).collect(),
            offsets: self
                .tokens
                .iter()
                .enumerate()
                .map(|(index, t)| OffsetToken {
                    index,
                    id: 0,
                    char_start: t.start,
                    char_end: t.end,
                    segment: Segment::Answer,
                    is_special: false,
                })
                .collect(),
        };
        Self {
            id: self.id.clone(),
            spans: detect_spans(&prediction, threshold),
            tokens: self.tokens.clone(),
        }
    }

    /// Example-level score: the highest token probability, 0 without tokens.
    pub fn score(&self) -> f64 {
        self.tokens.iter().map(|t| t.prob).fold(0.0, f64::max)
    }
}

/// Spans of consecutive answer tokens whose probability is at least `threshold`.
///
/// # Panics
///
/// If `threshold` is outside `(0, 1)` or `probs` and `offsets` differ in length.
pub fn detect_spans(prediction: &TokenPrediction, threshold: f64) -> Vec<PredictedSpan> {
    assert!(threshold > 0.0 && threshold < 1.0, "threshold {threshold} outside (0, 1)");
    assert_eq!(prediction.probs.len(), prediction.offsets.len(), "probs and offsets differ in length");
    let flags: Vec<bool> = prediction.probs.iter().map(|&p| p >= threshold).collect();
    flagged_runs(&prediction.offsets, &flags)
        .into_iter()
        .map(|run| {
            let members: Vec<f64> = run
                .clone()
                .filter(|&i| !prediction.offsets[i].is_special)
                .map(|i| prediction.probs[i])
                .collect();
            PredictedSpan {
                start: prediction.offsets[run.start].char_start,
                end: prediction.offsets[run.end - 1].char_end,
                confidence: members.iter().sum::<f64>() / members.len() as f64,
            }
        })
        .collect()
}
