//! Command-line front end. The `haldetect` binary only calls [`main`].
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 partial success,
//! 3 translation transport failure, 4 artifact mismatch. Every non-zero exit
//! writes one `error: kind=<kind> <reason>` line to stderr.

use std::fs;
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::align::{build_labels, read_label_file, write_label_file, AlignError, LabeledSequence, Tokenizer, WordTokenizer};
use crate::corpus::{load_corpus, save_corpus, RagRecord};
use crate::detector::{
    predict, train, RecordPrediction, TokenClassifier, ToyEncoderConfig, TrainConfig, DEFAULT_THRESHOLD,
    TOY_ENCODER_ID,
};
use crate::metrics::{sliced_report, MetricsError};
use crate::tagproto::{
    translate_corpus, CommandBackend, FailureKind, HttpBackend, HttpBackendConfig, IdentityBackend, RetryPolicy,
    TranslationBackend, DEFAULT_PARALLELISM,
};

pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TRAINING_LOG_FILE: &str = "training.json";

#[derive(Debug, Parser)]
#[command(name = "haldetect", version, about = "Token-level hallucination detection for RAG outputs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Returns the input unchanged; for dry runs.
    Identity,
    /// Runs `--command` once per text, source on stdin, translation on stdout.
    Command,
    /// OpenAI-compatible chat completions server, configured by `--backend-config`.
    Http,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Translate a corpus while preserving hallucination spans.
    Translate {
        input: PathBuf,
        #[arg(long)]
        target_lang: String,
        /// Overrides each record's `language` field.
        #[arg(long)]
        source_lang: Option<String>,
        #[arg(long, value_enum, default_value = "identity")]
        backend: BackendKind,
        #[arg(long)]
        command: Option<String>,
        /// TOML file with `endpoint`, `model`, `timeout_secs`, `temperature`, `api_key_env`.
        #[arg(long)]
        backend_config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
        parallelism: usize,
        /// Total attempts per text, including the first.
        #[arg(long, default_value_t = 3)]
        max_attempts: usize,
        #[arg(long)]
        out: PathBuf,
        /// Failure list; defaults to `<out>.failures.jsonl`.
        #[arg(long)]
        failures_out: Option<PathBuf>,
    },
    /// Fit a word-piece vocabulary on corpus prompts and answers.
    FitTokenizer {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        max_vocab: usize,
        #[arg(long, default_value_t = 12)]
        max_piece_chars: usize,
        #[arg(long)]
        lowercase: bool,
    },
    /// Pack records and write per-token labels.
    BuildLabels {
        input: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, default_value_t = 4096)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a token classifier on a label file.
    Train {
        labels: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// TOML with optional `[train]` and `[encoder]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score answer tokens and emit detected spans.
    Predict {
        input: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        /// Defaults to the model's `threshold_default`.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token- and example-level metrics per task slice.
    Evaluate {
        gold: PathBuf,
        predictions: PathBuf,
        #[arg(long)]
        report_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Model directory whose manifest is cited in the report.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
}

/// A failed command: exit code plus a one-line reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub reason: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, reason: impl std::fmt::Display) -> Self {
        Self {
            code,
            kind,
            reason: reason.to_string().replace('\n', " "),
        }
    }
    fn usage(reason: impl std::fmt::Display) -> Self {
        Self::new(1, "usage", reason)
    }
    fn input(reason: impl std::fmt::Display) -> Self {
        Self::new(1, "invalid_input", reason)
    }
    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::new(1, "io", format!("{}: {err}", path.display()))
    }
    fn mismatch(reason: impl std::fmt::Display) -> Self {
        Self::new(4, "artifact_mismatch", reason)
    }
}

/// What a successful (or partially successful) command reports.
pub struct Outcome {
    pub summary: String,
    /// Set for partial success (exit 2) or transport failures (exit 3).
    pub warning: Option<Failure>,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self { summary, warning: None }
    }
}

/// Sidecar written next to a label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub tokenizer: String,
    pub max_len: usize,
    pub records: usize,
    pub written: usize,
    pub truncated: Vec<String>,
    pub unencodable: Vec<String>,
}

pub fn label_manifest_path(labels: &Path) -> PathBuf {
    let mut name = labels.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    encoder: EncoderFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderFile {
    hidden_size: Option<usize>,
    num_layers: Option<usize>,
    num_heads: Option<usize>,
    intermediate_size: Option<usize>,
}

/// Parses arguments, runs the command and maps the result to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            if !err.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("error: kind=usage {}", err.kind());
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.warning {
                Some(w) => {
                    eprintln!("error: kind={} {}", w.kind, w.reason);
                    ExitCode::from(w.code)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(f) => {
            eprintln!("error: kind={} {}", f.kind, f.reason);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(command: Command) -> Result<Outcome, Failure> {
    match command {
        Command::Translate {
            input,
            target_lang,
            source_lang,
            backend,
            command,
            backend_config,
            parallelism,
            max_attempts,
            out,
            failures_out,
        } => {
            let backend = make_backend(backend, command.as_deref(), backend_config.as_deref())?;
            let parallelism = NonZeroUsize::new(parallelism).ok_or_else(|| Failure::usage("--parallelism must be at least 1"))?;
            let policy = RetryPolicy::new(max_attempts).ok_or_else(|| Failure::usage("--max-attempts must be at least 1"))?;
            let failures_out = failures_out.unwrap_or_else(|| {
                let mut name = out.as_os_str().to_owned();
                name.push(".failures.jsonl");
                PathBuf::from(name)
            });
            cmd_translate(&input, &target_lang, source_lang.as_deref(), backend.as_ref(), policy, parallelism, &out, &failures_out)
        }
        Command::FitTokenizer {
            inputs,
            out,
            max_vocab,
            max_piece_chars,
            lowercase,
        } => cmd_fit_tokenizer(&inputs, &out, max_vocab, max_piece_chars, lowercase),
        Command::BuildLabels {
            input,
            tokenizer,
            max_len,
            out,
        } => cmd_build_labels(&input, &tokenizer, max_len, &out),
        Command::Train {
            labels,
            tokenizer,
            config,
            model_dir,
            epochs,
            learning_rate,
            batch_size,
            seed,
        } => {
            let mut file = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
                    toml::from_str::<TrainFile>(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
                }
                None => TrainFile::default(),
            };
            if let Some(v) = epochs {
                file.train.epochs = v;
            }
            if let Some(v) = learning_rate {
                file.train.learning_rate = v;
            }
            if let Some(v) = batch_size {
                file.train.batch_size = v;
            }
            if let Some(v) = seed {
                file.train.seed = v;
            }
            cmd_train(&labels, &tokenizer, file, &model_dir)
        }
        Command::Predict {
            input,
            model_dir,
            threshold,
            batch_size,
            out,
        } => cmd_predict(&input, &model_dir, threshold, batch_size, &out),
        Command::Evaluate {
            gold,
            predictions,
            report_dir,
            threshold,
            model_dir,
        } => cmd_evaluate(&gold, &predictions, &report_dir, threshold, model_dir.as_deref()),
    }
}

fn make_backend(
    kind: BackendKind,
    command: Option<&str>,
    config: Option<&Path>,
) -> Result<Box<dyn TranslationBackend>, Failure> {
    Ok(match kind {
        BackendKind::Identity => Box::new(IdentityBackend),
        BackendKind::Command => {
            let line = command.ok_or_else(|| Failure::usage("--backend command needs --command"))?;
            Box::new(CommandBackend::from_command_line(line).ok_or_else(|| Failure::usage("--command is empty"))?)
        }
        BackendKind::Http => {
            let path = config.ok_or_else(|| Failure::usage("--backend http needs --backend-config"))?;
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let config: HttpBackendConfig =
                toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Box::new(HttpBackend::new(config).map_err(Failure::usage)?)
        }
    })
}

fn load(path: &Path) -> Result<Vec<RagRecord>, Failure> {
    load_corpus(path).map_err(Failure::input)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Failure::io(path, e))?;
        out.write_all(b"\n").map_err(|e| Failure::io(path, e))?;
    }
    out.flush().map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_translate(
    input: &Path,
    target_lang: &str,
    source_lang: Option<&str>,
    backend: &dyn TranslationBackend,
    policy: RetryPolicy,
    parallelism: NonZeroUsize,
    out: &Path,
    failures_out: &Path,
) -> Result<Outcome, Failure> {
    let mut records = load(input)?;
    if let Some(lang) = source_lang {
        for r in &mut records {
            r.language = lang.to_string();
        }
    }
    let result = translate_corpus(&records, backend, target_lang, policy, parallelism);
    save_corpus(&result.translated, out).map_err(Failure::input)?;
    write_jsonl(failures_out, &result.failures)?;

    let summary = format!(
        "translate: {} translated, {} failed of {} records -> {}",
        result.translated.len(),
        result.failures.len(),
        records.len(),
        out.display()
    );
    let transport = result.failures.iter().filter(|f| f.kind == FailureKind::Transport).count();
    let warning = if transport > 0 {
        Some(Failure::new(3, "transport", format!("{transport} records hit backend errors; see {}", failures_out.display())))
    } else if !result.failures.is_empty() {
        Some(Failure::new(
            2,
            "partial",
            format!("{} records failed; see {}", result.failures.len(), failures_out.display()),
        ))
    } else {
        None
    };
    Ok(Outcome { summary, warning })
}

fn cmd_fit_tokenizer(
    inputs: &[PathBuf],
    out: &Path,
    max_vocab: usize,
    max_piece_chars: usize,
    lowercase: bool,
) -> Result<Outcome, Failure> {
    if max_vocab <= 4 {
        return Err(Failure::usage("--max-vocab must leave room beyond the 4 special tokens"));
    }
    let mut records = Vec::new();
    for path in inputs {
        records.extend(load(path)?);
    }
    let texts = records.iter().flat_map(|r| [r.prompt.as_str(), r.answer.as_str()]);
    let tokenizer = WordTokenizer::fit(texts, max_vocab, max_piece_chars, lowercase);
    tokenizer.save(out).map_err(|e| Failure::io(out, e))?;
    Ok(Outcome::ok(format!(
        "fit-tokenizer: {} entries from {} records, fingerprint {} -> {}",
        tokenizer.vocab_size(),
        records.len(),
        tokenizer.fingerprint(),
        out.display()
    )))
}

fn load_tokenizer(path: &Path) -> Result<WordTokenizer, Failure> {
    WordTokenizer::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn cmd_build_labels(input: &Path, tokenizer: &Path, max_len: usize, out: &Path) -> Result<Outcome, Failure> {
    let tokenizer = load_tokenizer(tokenizer)?;
    let records = load(input)?;
    let mut lines = Vec::with_capacity(records.len());
    let mut truncated = Vec::new();
    let mut unencodable = Vec::new();
    for record in &records {
        match build_labels(record, &tokenizer, max_len) {
            Ok(seq) => {
                if seq.truncated {
                    truncated.push(seq.id.clone());
                }
                lines.push(seq.to_labeled());
            }
            Err(AlignError::Unencodable { id, needed, max_len }) => {
                log::warn!("record {id}: answer needs {needed} tokens, max_len is {max_len}; skipped");
                unencodable.push(id);
            }
            Err(e) => return Err(Failure::usage(e)),
        }
    }
    write_label_file(out, &lines).map_err(|e| Failure::io(out, e))?;
    let manifest = LabelManifest {
        tokenizer: tokenizer.fingerprint(),
        max_len,
        records: records.len(),
        written: lines.len(),
        truncated,
        unencodable,
    };
    write_json(&label_manifest_path(out), &manifest)?;
    let summary = format!(
        "build-labels: {} sequences ({} with truncated prompts, {} unencodable) -> {}",
        manifest.written,
        manifest.truncated.len(),
        manifest.unencodable.len(),
        out.display()
    );
    let warning = (!manifest.unencodable.is_empty()).then(|| {
        Failure::new(
            2,
            "partial",
            format!("{} records do not fit max_len {max_len}: {}", manifest.unencodable.len(), manifest.unencodable.join(",")),
        )
    });
    Ok(Outcome { summary, warning })
}

#[derive(Serialize)]
struct TrainingLog<'a> {
    config: &'a TrainConfig,
    sequences: usize,
    supervised_tokens: usize,
    epoch_loss: &'a [f32],
}

fn cmd_train(labels: &Path, tokenizer_path: &Path, file: TrainFile, model_dir: &Path) -> Result<Outcome, Failure> {
    let config = file.train;
    config.validate().map_err(Failure::usage)?;
    if config.backbone_id != TOY_ENCODER_ID {
        return Err(Failure::usage(format!(
            "backbone {:?} is not built in; only {TOY_ENCODER_ID:?} is available from the command line",
            config.backbone_id
        )));
    }
    let tokenizer = load_tokenizer(tokenizer_path)?;
    let manifest_path = label_manifest_path(labels);
    match fs::read_to_string(&manifest_path) {
        Ok(text) => {
            let manifest: LabelManifest =
                serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", manifest_path.display())))?;
            if manifest.tokenizer != tokenizer.fingerprint() {
                return Err(Failure::mismatch(format!(
                    "labels were built with tokenizer {}, --tokenizer is {}",
                    manifest.tokenizer,
                    tokenizer.fingerprint()
                )));
            }
        }
        Err(_) => log::warn!("{} not found; cannot verify the tokenizer", manifest_path.display()),
    }
    let data: Vec<LabeledSequence> = read_label_file(labels).map_err(|e| Failure::input(format!("{}: {e}", labels.display())))?;

    let defaults = ToyEncoderConfig::new(tokenizer.vocab_size());
    let enc = file.encoder;
    let encoder = ToyEncoderConfig {
        vocab_size: tokenizer.vocab_size(),
        hidden_size: enc.hidden_size.unwrap_or(defaults.hidden_size),
        num_layers: enc.num_layers.unwrap_or(defaults.num_layers),
        num_heads: enc.num_heads.unwrap_or(defaults.num_heads),
        intermediate_size: enc.intermediate_size.unwrap_or(defaults.intermediate_size),
    };
    let mut model = TokenClassifier::toy(encoder, config.max_len, tokenizer.fingerprint(), config.seed)
        .map_err(Failure::usage)?;
    let trace = train(&mut model, &data, &config, tokenizer.pad_id()).map_err(|e| match e {
        crate::detector::DetectorError::VocabMismatch { .. } => Failure::mismatch(e),
        other => Failure::input(other),
    })?;
    model.save(model_dir).map_err(|e| Failure::io(model_dir, e))?;
    tokenizer
        .save(model_dir.join(TOKENIZER_FILE))
        .map_err(|e| Failure::io(model_dir, e))?;
    write_json(
        &model_dir.join(TRAINING_LOG_FILE),
        &TrainingLog {
            config: &config,
            sequences: data.len(),
            supervised_tokens: data.iter().map(LabeledSequence::supervised_count).sum(),
            epoch_loss: &trace.0,
        },
    )?;
    Ok(Outcome::ok(format!(
        "train: {} sequences, {} epochs, final loss {:.5}, seed {} -> {}",
        data.len(),
        config.epochs,
        trace.0.last().copied().unwrap_or(f32::NAN),
        config.seed,
        model_dir.display()
    )))
}

fn load_model(model_dir: &Path) -> Result<(TokenClassifier, WordTokenizer), Failure> {
    let model = TokenClassifier::load(model_dir).map_err(|e| Failure::mismatch(format!("{}: {e}", model_dir.display())))?;
    let tokenizer = load_tokenizer(&model_dir.join(TOKENIZER_FILE))?;
    if tokenizer.fingerprint() != model.manifest().tokenizer {
        return Err(Failure::mismatch(format!(
            "model expects tokenizer {}, found {}",
            model.manifest().tokenizer,
            tokenizer.fingerprint()
        )));
    }
    Ok((model, tokenizer))
}

fn check_threshold(threshold: f64) -> Result<f64, Failure> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(threshold)
    } else {
        Err(Failure::usage(format!("threshold {threshold} must lie strictly between 0 and 1")))
    }
}

fn cmd_predict(
    input: &Path,
    model_dir: &Path,
    threshold: Option<f64>,
    batch_size: usize,
    out: &Path,
) -> Result<Outcome, Failure> {
    let (model, tokenizer) = load_model(model_dir)?;
    let threshold = check_threshold(threshold.unwrap_or(model.manifest().threshold_default))?;
    let records = load(input)?;
    let max_len = model.manifest().max_len;
    let mut sequences = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for record in &records {
        match build_labels(record, &tokenizer, max_len) {
            Ok(seq) => sequences.push(seq),
            Err(AlignError::Unencodable { id, .. }) => skipped.push(id),
            Err(e) => return Err(Failure::usage(e)),
        }
    }
    let scored = predict(&model, &sequences, batch_size, tokenizer.pad_id()).map_err(Failure::mismatch)?;
    let lines: Vec<RecordPrediction> = scored.iter().map(|p| RecordPrediction::new(p, threshold)).collect();
    write_jsonl(out, &lines)?;
    let flagged = lines.iter().filter(|l| !l.spans.is_empty()).count();
    let summary = format!(
        "predict: {} records scored, {} with spans at threshold {threshold}, model seed {} -> {}",
        lines.len(),
        flagged,
        model.manifest().seed,
        out.display()
    );
    let warning = (!skipped.is_empty()).then(|| {
        Failure::new(
            2,
            "partial",
            format!("{} records exceed max_len {max_len}: {}", skipped.len(), skipped.join(",")),
        )
    });
    Ok(Outcome { summary, warning })
}

fn read_predictions(path: &Path) -> Result<Vec<RecordPrediction>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Failure::input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn cmd_evaluate(
    gold: &Path,
    predictions: &Path,
    report_dir: &Path,
    threshold: f64,
    model_dir: Option<&Path>,
) -> Result<Outcome, Failure> {
    let threshold = check_threshold(threshold)?;
    let corpus = load(gold)?;
    let predictions: Vec<RecordPrediction> = read_predictions(predictions)?
        .iter()
        .map(|p| p.rethreshold(threshold))
        .collect();
    let mut report = sliced_report(&corpus, &predictions, threshold).map_err(|e| match e {
        MetricsError::IdMismatch { .. } | MetricsError::TokenOutOfBounds { .. } => Failure::mismatch(e),
        other => Failure::input(other),
    })?;
    if let Some(dir) = model_dir {
        let m = TokenClassifier::read_manifest(dir).map_err(Failure::mismatch)?;
        report.set_model_manifest_version(Some(format!("{}/v{}/seed{}", m.backbone_id, m.version, m.seed)));
    }
    fs::create_dir_all(report_dir).map_err(|e| Failure::io(report_dir, e))?;
    let json_path = report_dir.join("report.json");
    fs::write(&json_path, report.to_json() + "\n").map_err(|e| Failure::io(&json_path, e))?;
    let csv_path = report_dir.join("report.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Failure::io(&csv_path, e))?;
    report.write_csv(file).map_err(|e| Failure::io(&csv_path, e))?;

    let whole = report
        .get(crate::metrics::Level::Token, crate::metrics::Slice::Whole)
        .map(|r| r.class_1.f1.to_string())
        .unwrap_or_else(|| "n/a".into());
    Ok(Outcome::ok(format!(
        "evaluate: {} records, token-level hallucinated F1 {whole} -> {}",
        corpus.len(),
        report_dir.display()
    )))
}
