//! Token- and example-level detection metrics.
//!
//! Both classes are always scored: class 1 (hallucinated) and class 0
//! (supported), plus their unweighted macro average. AUROC is the rank
//! statistic over scores, with ties counted as one half. Quantities that are
//! undefined (zero denominators, single-class AUROC) are reported as absent
//! with a reason instead of 0 or NaN.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::overlap_flags;
use crate::corpus::{char_slice, normalize_spans, RagRecord, TaskType};
use crate::detector::RecordPrediction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{gold} gold labels but {probs} probabilities")]
    LengthMismatch { gold: usize, probs: usize },
    #[error("gold label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("ids without predictions: {missing:?}; predictions without gold record: {unknown:?}")]
    IdMismatch {
        missing: Vec<String>,
        unknown: Vec<String>,
    },
    #[error("record {id}: prediction tokens reach char {end} of a {len}-char answer")]
    TokenOutOfBounds { id: String, end: usize, len: usize },
}

/// A metric value, or the reason it has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Measure {
    Value(f64),
    Undefined { undefined: String },
}

impl Measure {
    fn undefined(reason: impl Into<String>) -> Self {
        Measure::Undefined {
            undefined: reason.into(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(*v),
            Measure::Undefined { .. } => None,
        }
    }

    fn ratio(num: usize, den: usize, reason: &str) -> Self {
        if den == 0 {
            Measure::undefined(reason)
        } else {
            Measure::Value(num as f64 / den as f64)
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Value(v) => write!(f, "{v:.4}"),
            Measure::Undefined { .. } => f.write_str("n/a"),
        }
    }
}

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (gold, pred) in pairs {
            match (gold, pred) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with class 0 as the positive class.
    pub fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub p: Measure,
    pub r: Measure,
    pub f1: Measure,
    pub support: usize,
}

impl ClassScores {
    /// Scores for the positive class of `c`.
    pub fn from_confusion(c: &Confusion) -> Self {
        let p = Measure::ratio(c.tp, c.tp + c.fp, "no predicted instances of this class");
        let r = Measure::ratio(c.tp, c.tp + c.fn_, "no gold instances of this class");
        let f1 = match (p.value(), r.value()) {
            (Some(p), Some(r)) if p + r > 0.0 => Measure::Value(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Measure::Value(0.0),
            _ => Measure::undefined("precision or recall undefined"),
        };
        Self {
            p,
            r,
            f1,
            support: c.tp + c.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub p: Measure,
    pub r: Measure,
    pub f1: Measure,
}

fn mean2(a: &Measure, b: &Measure) -> Measure {
    match (a.value(), b.value()) {
        (Some(a), Some(b)) => Measure::Value((a + b) / 2.0),
        _ => Measure::undefined("undefined for at least one class"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Token,
    Example,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Token => "token",
            Level::Example => "example",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slice {
    Summary,
    Data2txt,
    QA,
    Whole,
}

impl Slice {
    pub const ALL: [Slice; 4] = [Slice::Summary, Slice::Data2txt, Slice::QA, Slice::Whole];

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::Summary => "Summary",
            Slice::Data2txt => "Data2txt",
            Slice::QA => "QA",
            Slice::Whole => "Whole",
        }
    }

    pub fn contains(self, task: TaskType) -> bool {
        match self {
            Slice::Whole => true,
            Slice::Summary => task == TaskType::Summary,
            Slice::Data2txt => task == TaskType::Data2txt,
            Slice::QA => task == TaskType::QA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub slice: Slice,
    pub class_0: ClassScores,
    pub class_1: ClassScores,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
    pub auroc: Measure,
    pub threshold: f64,
    pub confusion: Confusion,
    #[serde(default)]
    pub model_manifest_version: Option<String>,
}

impl MetricsReport {
    pub fn from_confusion(level: Level, slice: Slice, confusion: Confusion, auroc: Measure, threshold: f64) -> Self {
        let class_1 = ClassScores::from_confusion(&confusion);
        let class_0 = ClassScores::from_confusion(&confusion.flipped());
        let macro_avg = MacroScores {
            p: mean2(&class_0.p, &class_1.p),
            r: mean2(&class_0.r, &class_1.r),
            f1: mean2(&class_0.f1, &class_1.f1),
        };
        Self {
            level,
            slice,
            class_0,
            class_1,
            macro_avg,
            auroc,
            threshold,
            confusion,
            model_manifest_version: None,
        }
    }
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auroc(gold: &[bool], scores: &[f64]) -> Measure {
    assert_eq!(gold.len(), scores.len(), "auroc: gold and scores differ in length");
    let n_pos = gold.iter().filter(|&&g| g).count();
    let n_neg = gold.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Measure::undefined("gold labels contain a single class");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| gold[k]).count();
        pos_rank_sum += avg_rank * pos_in_tie as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Measure::Value(u / (n_pos as f64 * n_neg as f64))
}

fn check_binary(gold: &[u8]) -> Result<(), MetricsError> {
    match gold.iter().find(|&&g| g > 1) {
        Some(&g) => Err(MetricsError::BadLabel(g)),
        None => Ok(()),
    }
}

/// Token-level report over supervised tokens. A token is predicted
/// hallucinated when its probability is at least `threshold`.
pub fn token_metrics(gold: &[u8], probs: &[f64], threshold: f64) -> Result<MetricsReport, MetricsError> {
    token_metrics_for(Slice::Whole, gold, probs, threshold)
}

fn token_metrics_for(slice: Slice, gold: &[u8], probs: &[f64], threshold: f64) -> Result<MetricsReport, MetricsError> {
    if gold.len() != probs.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            probs: probs.len(),
        });
    }
    check_binary(gold)?;
    let gold: Vec<bool> = gold.iter().map(|&g| g == 1).collect();
    let confusion = Confusion::from_pairs(gold.iter().zip(probs).map(|(&g, &p)| (g, p >= threshold)));
    Ok(MetricsReport::from_confusion(
        Level::Token,
        slice,
        confusion,
        auroc(&gold, probs),
        threshold,
    ))
}

fn index_predictions<'a>(
    records: &[&RagRecord],
    predictions: &'a [RecordPrediction],
) -> Result<HashMap<&'a str, &'a RecordPrediction>, MetricsError> {
    let by_id: HashMap<&str, &RecordPrediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut missing: Vec<String> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    let mut unknown: Vec<String> = predictions
        .iter()
        .filter(|p| !gold_ids.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if missing.is_empty() && unknown.is_empty() {
        return Ok(by_id);
    }
    missing.sort();
    unknown.sort();
    Err(MetricsError::IdMismatch { missing, unknown })
}

/// Example-level report: gold label is "has a gold span", predicted label is
/// "has a predicted span", and the AUROC score is the maximum token probability.
pub fn example_metrics(
    records: &[RagRecord],
    predictions: &[RecordPrediction],
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let refs: Vec<&RagRecord> = records.iter().collect();
    let by_id = index_predictions(&refs, predictions)?;
    example_metrics_for(Slice::Whole, &refs, &by_id, threshold)
}

fn example_metrics_for(
    slice: Slice,
    records: &[&RagRecord],
    by_id: &HashMap<&str, &RecordPrediction>,
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let mut gold = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    let mut pairs = Vec::with_capacity(records.len());
    for record in records {
        let pred = by_id[record.id.as_str()];
        let g = record.has_hallucination();
        gold.push(g);
        scores.push(pred.score());
        pairs.push((g, !pred.spans.is_empty()));
    }
    Ok(MetricsReport::from_confusion(
        Level::Example,
        slice,
        Confusion::from_pairs(pairs),
        auroc(&gold, &scores),
        threshold,
    ))
}

/// Gold 0/1 per prediction token, by the any-overlap rule against the
/// record's normalized, non-blank spans.
pub fn gold_token_labels(record: &RagRecord, prediction: &RecordPrediction) -> Result<Vec<u8>, MetricsError> {
    let len = record.answer_len();
    if let Some(t) = prediction.tokens.iter().find(|t| t.end > len) {
        return Err(MetricsError::TokenOutOfBounds {
            id: record.id.clone(),
            end: t.end,
            len,
        });
    }
    let spans: Vec<_> = normalize_spans(&record.labels)
        .into_iter()
        .filter(|s| !char_slice(&record.answer, s.start, s.end).trim().is_empty())
        .collect();
    let offsets: Vec<(usize, usize)> = prediction.tokens.iter().map(|t| (t.start, t.end)).collect();
    Ok(overlap_flags(&offsets, &spans).into_iter().map(u8::from).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedSlice {
    pub level: Level,
    pub slice: Slice,
    pub reason: String,
}

/// Reports for every level × slice of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicedReport {
    pub threshold: f64,
    pub model_manifest_version: Option<String>,
    pub reports: Vec<MetricsReport>,
    pub omitted: Vec<OmittedSlice>,
}

impl SlicedReport {
    pub fn get(&self, level: Level, slice: Slice) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.level == level && r.slice == slice)
    }

    pub fn set_model_manifest_version(&mut self, version: Option<String>) {
        for r in &mut self.reports {
            r.model_manifest_version = version.clone();
        }
        self.model_manifest_version = version;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per level × slice; undefined values are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "level", "slice", "class_0_p", "class_0_r", "class_0_f1", "class_0_support", "class_1_p", "class_1_r",
            "class_1_f1", "class_1_support", "macro_p", "macro_r", "macro_f1", "auroc", "tp", "fp", "fn", "tn",
            "threshold",
        ])?;
        let cell = |m: &Measure| m.value().map(|v| v.to_string()).unwrap_or_default();
        for r in &self.reports {
            w.write_record([
                r.level.as_str().to_string(),
                r.slice.as_str().to_string(),
                cell(&r.class_0.p),
                cell(&r.class_0.r),
                cell(&r.class_0.f1),
                r.class_0.support.to_string(),
                cell(&r.class_1.p),
                cell(&r.class_1.r),
                cell(&r.class_1.f1),
                r.class_1.support.to_string(),
                cell(&r.macro_avg.p),
                cell(&r.macro_avg.r),
                cell(&r.macro_avg.f1),
                cell(&r.auroc),
                r.confusion.tp.to_string(),
                r.confusion.fp.to_string(),
                r.confusion.fn_.to_string(),
                r.confusion.tn.to_string(),
                r.threshold.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Token- and example-level reports for each task slice and the whole corpus.
///
/// Whole is computed over the union of records, not averaged from slices.
/// Slices without records are listed in `omitted`.
pub fn sliced_report(
    corpus: &[RagRecord],
    predictions: &[RecordPrediction],
    threshold: f64,
) -> Result<SlicedReport, MetricsError> {
    let refs: Vec<&RagRecord> = corpus.iter().collect();
    let by_id = index_predictions(&refs, predictions)?;

    let mut token_data: BTreeMap<&str, (Vec<u8>, Vec<f64>)> = BTreeMap::new();
    for record in corpus {
        let pred = by_id[record.id.as_str()];
        let gold = gold_token_labels(record, pred)?;
        let probs = pred.tokens.iter().map(|t| t.prob).collect();
        token_data.insert(record.id.as_str(), (gold, probs));
    }

    let mut reports = Vec::new();
    let mut omitted = Vec::new();
    for level in [Level::Token, Level::Example] {
        for slice in Slice::ALL {
            let members: Vec<&RagRecord> = refs.iter().copied().filter(|r| slice.contains(r.task_type)).collect();
            if members.is_empty() {
                omitted.push(OmittedSlice {
                    level,
                    slice,
                    reason: "no records in this slice".into(),
                });
                continue;
            }
            let report = match level {
                Level::Token => {
                    let (mut gold, mut probs) = (Vec::new(), Vec::new());
                    for r in &members {
                        let (g, p) = &token_data[r.id.as_str()];
                        gold.extend_from_slice(g);
                        probs.extend_from_slice(p);
                    }
                    token_metrics_for(slice, &gold, &probs, threshold)?
                }
                Level::Example => example_metrics_for(slice, &members, &by_id, threshold)?,
            };
            reports.push(report);
        }
    }
    Ok(SlicedReport {
        threshold,
        model_manifest_version: None,
        reports,
        omitted,
    })
}
