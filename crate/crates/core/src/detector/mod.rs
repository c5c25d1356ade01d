//! Binary token classifier: an encoder backbone plus one affine head mapping
//! each hidden state to two logits (supported, hallucinated).
//!
//! Training minimizes cross-entropy over supervised answer tokens only; tokens
//! labeled with the ignore index never enter the loss.

mod encoder;
mod spans;

pub use encoder::{ToyEncoder, ToyEncoderConfig, TOY_ENCODER_ID};
pub use spans::{detect_spans, PredictedSpan, RecordPrediction, ScoredToken, TokenPrediction};

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Linear, Module, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::{LabeledSequence, TokenLabelSequence, IGNORE_INDEX};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training data")]
    EmptyTrainingData,
    #[error("training data has no supervised tokens")]
    NoSupervisedTokens,
    #[error("sequence {id}: {len} tokens exceed max_len {max_len}")]
    TooLong { id: String, len: usize, max_len: usize },
    #[error("sequence {id}: {reason}")]
    BadSequence { id: String, reason: String },
    #[error("sequence {id}: token id {token} outside vocabulary of {vocab}")]
    VocabMismatch { id: String, token: u32, vocab: usize },
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Per-token encoder. `forward` takes `(batch, seq)` u32 ids and a `(batch, seq)`
/// 0/1 attention mask and returns `(batch, seq, hidden)` states.
pub trait Backbone: Send + Sync {
    fn id(&self) -> &str;
    fn hidden_size(&self) -> usize;
    /// Construction parameters, written to the model manifest.
    fn config(&self) -> serde_json::Value;
    fn forward(&self, input_ids: &Tensor, attention_mask: &Tensor) -> candle_core::Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::backbone_id")]
    pub backbone_id: String,
    #[serde(default = "defaults::ignore_label")]
    pub ignore_label: i64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
}

mod defaults {
    pub fn epochs() -> usize {
        6
    }
    pub fn learning_rate() -> f64 {
        1e-5
    }
    pub fn batch_size() -> usize {
        4
    }
    pub fn max_len() -> usize {
        4096
    }
    pub fn backbone_id() -> String {
        super::TOY_ENCODER_ID.to_string()
    }
    pub fn ignore_label() -> i64 {
        super::IGNORE_INDEX
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
}

impl Default for TrainConfig {
    /// 6 epochs, learning rate 1e-5, batch size 4, max_len 4096.
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            max_len: defaults::max_len(),
            seed: 0,
            backbone_id: defaults::backbone_id(),
            ignore_label: defaults::ignore_label(),
            weight_decay: defaults::weight_decay(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.ignore_label == 0 || self.ignore_label == 1 {
            return bad("ignore_label must differ from the class labels 0 and 1");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Persisted next to the weights in a model directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub backbone_id: String,
    pub backbone_config: serde_json::Value,
    pub max_len: usize,
    pub label_map: std::collections::BTreeMap<String, String>,
    pub threshold_default: f64,
    pub ignore_label: i64,
    pub version: u32,
    /// Fingerprint of the tokenizer the label files were built with.
    pub tokenizer: String,
    pub seed: u64,
}

impl ModelManifest {
    fn new(backbone: &dyn Backbone, max_len: usize, tokenizer: String, seed: u64, ignore_label: i64) -> Self {
        Self {
            backbone_id: backbone.id().to_string(),
            backbone_config: backbone.config(),
            max_len,
            label_map: [("0", "supported"), ("1", "hallucinated")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            threshold_default: DEFAULT_THRESHOLD,
            ignore_label,
            version: MANIFEST_VERSION,
            tokenizer,
            seed,
        }
    }
}

/// Padded tensors for one batch of labeled sequences.
///
/// `targets` holds the class of each position; positions with
/// `loss_mask == false` are excluded from the loss whatever their target.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<f32>,
    pub targets: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl Batch {
    pub fn new(sequences: &[&LabeledSequence], pad_id: u32, ignore_label: i64) -> Self {
        let seq_len = sequences.iter().map(|s| s.input_ids.len()).max().unwrap_or(0);
        let n = sequences.len() * seq_len;
        let mut batch = Batch {
            batch: sequences.len(),
            seq_len,
            input_ids: vec![pad_id; n],
            attention_mask: vec![0.0; n],
            targets: vec![0; n],
            loss_mask: vec![false; n],
        };
        for (row, seq) in sequences.iter().enumerate() {
            for (col, (&id, &label)) in seq.input_ids.iter().zip(&seq.labels).enumerate() {
                let at = row * seq_len + col;
                batch.input_ids[at] = id;
                batch.attention_mask[at] = 1.0;
                if label != ignore_label {
                    batch.targets[at] = label as u32;
                    batch.loss_mask[at] = true;
                }
            }
        }
        batch
    }

    pub fn supervised(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// A backbone with its classification head and the variables behind both.
pub struct TokenClassifier {
    varmap: VarMap,
    backbone: Box<dyn Backbone>,
    head: Linear,
    manifest: ModelManifest,
    device: Device,
}

impl std::fmt::Debug for TokenClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenClassifier")
            .field("manifest", &self.manifest)
            .finish_non_exhaustive()
    }
}

impl TokenClassifier {
    /// Builds a classifier around the backbone returned by `build` and
    /// initializes every variable from `seed`.
    ///
    /// Matrices are drawn from N(0, 0.02²); biases and norm shifts start at 0,
    /// norm scales at 1.
    pub fn new<F>(build: F, max_len: usize, tokenizer: impl Into<String>, seed: u64) -> Result<Self, DetectorError>
    where
        F: FnOnce(VarBuilder) -> candle_core::Result<Box<dyn Backbone>>,
    {
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let backbone = build(vb.pp("backbone"))?;
        let head = encoder::classification_head(backbone.hidden_size(), vb.pp("head"))?;
        let manifest = ModelManifest::new(backbone.as_ref(), max_len, tokenizer.into(), seed, IGNORE_INDEX);
        let model = Self {
            varmap,
            backbone,
            head,
            manifest,
            device,
        };
        model.initialize(seed)?;
        Ok(model)
    }

    pub fn toy(config: ToyEncoderConfig, max_len: usize, tokenizer: impl Into<String>, seed: u64) -> Result<Self, DetectorError> {
        Self::new(
            |vb| Ok(Box::new(ToyEncoder::new(config, vb)?) as Box<dyn Backbone>),
            max_len,
            tokenizer,
            seed,
        )
    }

    fn sorted_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut vars: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    fn initialize(&self, seed: u64) -> Result<(), DetectorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        for (name, var) in self.sorted_vars() {
            if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") {
                continue;
            }
            let shape = var.shape().clone();
            let values: Vec<f32> = (0..shape.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            var.set(&Tensor::from_vec(values, shape, &self.device)?)?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.manifest.backbone_config.get("vocab_size").and_then(|v| v.as_u64()).map(|v| v as usize)
    }

    /// Logits of shape (batch, seq, 2).
    pub fn logits(&self, batch: &Batch) -> Result<Tensor, DetectorError> {
        let ids = Tensor::from_vec(batch.input_ids.clone(), (batch.batch, batch.seq_len), &self.device)?;
        let mask = Tensor::from_vec(batch.attention_mask.clone(), (batch.batch, batch.seq_len), &self.device)?;
        let hidden = self.backbone.forward(&ids, &mask)?;
        Ok(self.head.forward(&hidden)?)
    }

    /// Mean cross-entropy over the batch's supervised positions, as a scalar
    /// tensor; `None` when the batch has no supervised position.
    pub fn loss_tensor(&self, batch: &Batch) -> Result<Option<Tensor>, DetectorError> {
        let picked: Vec<u32> = (0..batch.loss_mask.len() as u32)
            .filter(|&i| batch.loss_mask[i as usize])
            .collect();
        if picked.is_empty() {
            return Ok(None);
        }
        let targets: Vec<u32> = picked.iter().map(|&i| batch.targets[i as usize]).collect();
        let logits = self.logits(batch)?.reshape((batch.batch * batch.seq_len, 2))?;
        let index = Tensor::from_vec(picked, targets.len(), &self.device)?;
        let selected = logits.index_select(&index, 0)?;
        let targets = Tensor::from_vec(targets, selected.dim(0)?, &self.device)?;
        Ok(Some(candle_nn::loss::cross_entropy(&selected, &targets)?))
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<Option<f32>, DetectorError> {
        Ok(match self.loss_tensor(batch)? {
            Some(t) => Some(t.to_scalar::<f32>()?),
            None => None,
        })
    }

    /// Hallucination probability for every position of the batch, row-major.
    fn positive_probs(&self, batch: &Batch) -> Result<Vec<Vec<f32>>, DetectorError> {
        let probs = candle_nn::ops::softmax(&self.logits(batch)?, candle_core::D::Minus1)?;
        let positive = probs.narrow(2, 1, 1)?.squeeze(2)?;
        Ok(positive.to_vec2::<f32>()?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DetectorError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        Ok(())
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ModelManifest, DetectorError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| DetectorError::Artifact(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| DetectorError::Artifact(format!("{}: {e}", path.display())))
    }

    /// Loads a model directory whose backbone is the built-in toy encoder.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DetectorError> {
        let manifest = Self::read_manifest(&dir)?;
        if manifest.backbone_id != TOY_ENCODER_ID {
            return Err(DetectorError::Artifact(format!(
                "backbone {:?} needs a custom loader (TokenClassifier::load_with)",
                manifest.backbone_id
            )));
        }
        let config: ToyEncoderConfig = serde_json::from_value(manifest.backbone_config.clone())
            .map_err(|e| DetectorError::Artifact(format!("backbone config: {e}")))?;
        Self::load_with(dir, |vb| Ok(Box::new(ToyEncoder::new(config, vb)?) as Box<dyn Backbone>))
    }

    /// Loads a model directory, rebuilding the backbone with `build`.
    pub fn load_with<F>(dir: impl AsRef<Path>, build: F) -> Result<Self, DetectorError>
    where
        F: FnOnce(VarBuilder) -> candle_core::Result<Box<dyn Backbone>>,
    {
        let dir = dir.as_ref();
        let manifest = Self::read_manifest(dir)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DetectorError::Artifact(format!("unsupported manifest version {}", manifest.version)));
        }
        let mut model = Self::new(build, manifest.max_len, manifest.tokenizer.clone(), manifest.seed)?;
        if model.backbone.id() != manifest.backbone_id {
            return Err(DetectorError::Artifact(format!(
                "manifest names backbone {:?}, loader built {:?}",
                manifest.backbone_id,
                model.backbone.id()
            )));
        }
        model.varmap.load(dir.join(WEIGHTS_FILE))?;
        model.manifest = manifest;
        Ok(model)
    }
}

fn check_sequences(data: &[LabeledSequence], config: &TrainConfig, vocab: Option<usize>) -> Result<(), DetectorError> {
    if data.is_empty() {
        return Err(DetectorError::EmptyTrainingData);
    }
    let mut supervised = 0;
    for seq in data {
        if seq.input_ids.len() != seq.labels.len() {
            return Err(DetectorError::BadSequence {
                id: seq.id.clone(),
                reason: format!("{} ids but {} labels", seq.input_ids.len(), seq.labels.len()),
            });
        }
        if seq.input_ids.len() > config.max_len {
            return Err(DetectorError::TooLong {
                id: seq.id.clone(),
                len: seq.input_ids.len(),
                max_len: config.max_len,
            });
        }
        if let Some(&bad) = seq.labels.iter().find(|&&l| l != config.ignore_label && l != 0 && l != 1) {
            return Err(DetectorError::BadSequence {
                id: seq.id.clone(),
                reason: format!("label {bad} is neither 0, 1 nor the ignore label"),
            });
        }
        if let (Some(vocab), Some(&token)) = (vocab, seq.input_ids.iter().max()) {
            if token as usize >= vocab {
                return Err(DetectorError::VocabMismatch {
                    id: seq.id.clone(),
                    token,
                    vocab,
                });
            }
        }
        supervised += seq.labels.iter().filter(|&&l| l == 0 || l == 1).count();
    }
    if supervised == 0 {
        return Err(DetectorError::NoSupervisedTokens);
    }
    Ok(())
}

/// Mean batch loss of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTrace(pub Vec<f32>);

/// Trains `model` in place with AdamW at a constant learning rate.
///
/// Each epoch visits the data in an order shuffled by `config.seed`.
/// Returns one mean loss per epoch.
pub fn train(
    model: &mut TokenClassifier,
    train_data: &[LabeledSequence],
    config: &TrainConfig,
    pad_id: u32,
) -> Result<LossTrace, DetectorError> {
    config.validate()?;
    check_sequences(train_data, config, model.vocab_size())?;
    model.manifest.max_len = config.max_len;
    model.manifest.seed = config.seed;
    model.manifest.ignore_label = config.ignore_label;

    let mut optimizer = AdamW::new(
        model.varmap.all_vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &train_data[i]).collect();
            let batch = Batch::new(&seqs, pad_id, config.ignore_label);
            let Some(loss) = model.loss_tensor(&batch)? else {
                continue;
            };
            optimizer.backward_step(&loss)?;
            total += loss.to_scalar::<f32>()? as f64;
            steps += 1;
        }
        let mean = (total / steps.max(1) as f64) as f32;
        log::info!("epoch {}/{}: loss {mean:.5}", epoch + 1, config.epochs);
        trace.push(mean);
    }
    Ok(LossTrace(trace))
}

/// Hallucination probabilities for the answer tokens of each sequence, in input order.
pub fn predict(
    model: &TokenClassifier,
    sequences: &[TokenLabelSequence],
    batch_size: usize,
    pad_id: u32,
) -> Result<Vec<TokenPrediction>, DetectorError> {
    let batch_size = batch_size.max(1);
    let vocab = model.vocab_size();
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size) {
        let labeled: Vec<LabeledSequence> = chunk.iter().map(|s| s.to_labeled()).collect();
        for (seq, lab) in chunk.iter().zip(&labeled) {
            if seq.answer_range.end > seq.tokens.len() || seq.answer_range.start > seq.answer_range.end {
                return Err(DetectorError::BadSequence {
                    id: seq.id.clone(),
                    reason: "answer range lies outside the token sequence".into(),
                });
            }
            if let (Some(vocab), Some(&token)) = (vocab, lab.input_ids.iter().max()) {
                if token as usize >= vocab {
                    return Err(DetectorError::VocabMismatch {
                        id: seq.id.clone(),
                        token,
                        vocab,
                    });
                }
            }
        }
        let refs: Vec<&LabeledSequence> = labeled.iter().collect();
        let batch = Batch::new(&refs, pad_id, IGNORE_INDEX);
        let probs = model.positive_probs(&batch)?;
        for (seq, row) in chunk.iter().zip(probs) {
            out.push(TokenPrediction {
                id: seq.id.clone(),
                probs: row[seq.answer_range.clone()].iter().map(|&p| p as f64).collect(),
                offsets: seq.answer_tokens().to_vec(),
            });
        }
    }
    Ok(out)
}
