//! Worked cases with hand-checkable answers, one module per pipeline stage.

use std::io::Write as _;
use std::num::NonZeroUsize;

use haldetect::align::{build_labels, labels_to_spans, length_stats, RawToken, TokenLabel, Tokenizer};
use haldetect::corpus::{
    char_slice, load_corpus, normalize_spans, save_corpus, to_binary, AnnotatedSpan, CorpusError, RagRecord,
    RecordError, Split, TaskType, CATEGORIES, HALLUCINATED,
};
use haldetect::detector::{detect_spans, PredictedSpan, RecordPrediction, ScoredToken, TokenPrediction};
use haldetect::metrics::{example_metrics, sliced_report, token_metrics, Confusion, Level, Measure, Slice};
use haldetect::tagproto::{
    extract_spans, inject_tags, translate_corpus, translate_record, validate_tags, BackendError, IdentityBackend,
    RetryPolicy, TextKind, TranslateError, TranslationBackend, TranslationRequest, CLOSE_TAG,
};

const TABLE_ONE_HEAD: &str = "Anne Frank Evi tarafından yapılan yeni bir araştırma, Anne Frank ve kız kardeşi Margot'un daha önce inanıldığından en az bir ay önce Bergen-Belsen toplama kampında ölmüş olabileceğini ortaya koydu. Araştırmacılar, Kızıl Haç, Uluslararası Eğitim Hizmeti ve Bergen-Belsen Anıtı arşivlerinin yanı sıra kurtulanların ifadelerini inceledi. ";
const SPAN_ONE: &str = "daha önce inanıldığından en az bir ay önce ölmüşler";
const SPAN_TWO: &str = "kampın kurtarılmasından önce kayıtların Naziler tarafından yakıldığı da belirtildi";

fn filler(chars: usize) -> String {
    "Belgeler yeniden tarandı. ".chars().cycle().take(chars).collect()
}

/// A Turkish summary laid out so its two annotated spans sit at 545–596 and 824–906.
fn table_one_answer() -> String {
    let mut answer = TABLE_ONE_HEAD.to_string();
    answer += &filler(545 - answer.chars().count());
    answer += SPAN_ONE;
    answer += &filler(824 - answer.chars().count());
    answer += SPAN_TWO;
    answer += ". Çalışma, kampın son haftalarına dair tanıklıkları da içeriyor.";
    answer
}

fn table_one_line() -> String {
    serde_json::json!({
        "id": "ragtruth-tr-0001",
        "task_type": "Summary",
        "split": "train",
        "language": "tr",
        "prompt": "Aşağıdaki haberi 116 kelimeyle özetleyin: Yetmiş yıl önce Anne Frank, Nazi toplama kampında 15 yaşında tifo nedeniyle öldü.",
        "answer": table_one_answer(),
        "labels": [
            {"start": 545, "end": 596, "label": "Evident Conflict"},
            {"start": 824, "end": 906, "label": "Evident Baseless Info"}
        ]
    })
    .to_string()
}

fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    for line in lines {
        writeln!(file, "{line}").unwrap();
    }
    file
}

fn record(id: &str, task: TaskType, answer: &str, spans: &[(usize, usize)]) -> RagRecord {
    RagRecord {
        id: id.into(),
        task_type: task,
        split: Split::Test,
        language: "en".into(),
        prompt: "context".into(),
        answer: answer.into(),
        labels: spans.iter().map(|&(s, e)| AnnotatedSpan::hallucinated(s, e)).collect(),
        source_model: None,
        extra: Default::default(),
    }
}

mod corpus {
    use super::*;

    #[test]
    fn empty_file_loads_no_records() {
        let file = write_lines(&[]);
        assert!(load_corpus(file.path()).unwrap().is_empty());
    }

    #[test]
    fn turkish_summary_record_loads_with_two_spans() {
        assert_eq!(char_slice(&table_one_answer(), 545, 596), SPAN_ONE);
        assert_eq!(char_slice(&table_one_answer(), 824, 906), SPAN_TWO);
        let file = write_lines(&[table_one_line()]);
        let records = load_corpus(file.path()).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!((r.task_type, r.split, r.language.as_str()), (TaskType::Summary, Split::Train, "tr"));
        let spans: Vec<_> = r.labels.iter().map(|s| (s.start, s.end, s.label.as_str())).collect();
        assert_eq!(spans, [(545, 596, "Evident Conflict"), (824, 906, "Evident Baseless Info")]);
    }

    #[test]
    fn out_of_bounds_span_names_the_record() {
        let line = r#"{"id":"short","task_type":"QA","split":"test","language":"en","prompt":"p","answer":"0123456789","labels":[{"start":5,"end":50,"label":"Subtle Conflict"}]}"#;
        let file = write_lines(&[line.to_string()]);
        match load_corpus(file.path()) {
            Err(CorpusError::Invalid { line: 1, id, source: RecordError::SpanOutOfBounds { .. } }) => assert_eq!(id, "short"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_corpus(file.path()).unwrap_err().to_string().contains("short"));
    }

    #[test]
    fn normalize_merges_overlap_but_keeps_gaps() {
        assert!(normalize_spans(&[]).is_empty());
        let merged = normalize_spans(&[AnnotatedSpan::new(10, 20, "A"), AnnotatedSpan::new(15, 25, "B")]);
        assert_eq!(merged.iter().map(|s| (s.start, s.end, s.label.as_str())).collect::<Vec<_>>(), [(10, 25, "A")]);
        let gap = [AnnotatedSpan::new(5, 8, "A"), AnnotatedSpan::new(9, 12, "B")];
        assert_eq!(normalize_spans(&gap), gap);
    }

    #[test]
    fn binary_projection_keeps_offsets() {
        let file = write_lines(&[table_one_line()]);
        let r = &load_corpus(file.path()).unwrap()[0];
        let b = to_binary(r);
        assert_eq!(b.labels.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(), [(545, 596), (824, 906)]);
        assert!(b.labels.iter().all(|s| s.label == HALLUCINATED));
        assert_eq!((&b.answer, &b.prompt, &b.id), (&r.answer, &r.prompt, &r.id));

        let mut four = record("four", TaskType::QA, "abcdefgh", &[]);
        four.labels = CATEGORIES.iter().enumerate().map(|(i, c)| AnnotatedSpan::new(2 * i, 2 * i + 1, *c)).collect();
        assert!(to_binary(&four).labels.iter().all(|s| s.label == HALLUCINATED));
        let clean = record("clean", TaskType::QA, "abc", &[]);
        assert_eq!(to_binary(&clean), clean);
    }

    #[test]
    fn newlines_stay_on_one_line_and_round_trip() {
        let mut r = record("nl", TaskType::Summary, "line one\nline two\r\n\ttabbed \"quoted\"", &[(0, 4)]);
        r.prompt = "a\nb".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(std::slice::from_ref(&r), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert_eq!(load_corpus(&path).unwrap(), vec![r]);
        save_corpus(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }
}

mod tags {
    use super::*;

    fn offsets(spans: &[AnnotatedSpan]) -> Vec<(usize, usize)> {
        spans.iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn injection_places_markers_around_spans() {
        let t = inject_tags("abcdef", &[]).unwrap();
        assert_eq!((t.as_str(), t.pair_count()), ("abcdef", 0));
        let t = inject_tags("abcdef", &[AnnotatedSpan::hallucinated(2, 4)]).unwrap();
        assert_eq!((t.as_str(), t.pair_count()), ("ab<HAL>cd</HAL>ef", 1));
        let t = inject_tags("xy", &[AnnotatedSpan::hallucinated(0, 2)]).unwrap();
        assert_eq!(t.as_str(), "<HAL>xy</HAL>");
    }

    #[test]
    fn unsorted_or_overlapping_spans_are_rejected() {
        let overlapping = [AnnotatedSpan::hallucinated(0, 3), AnnotatedSpan::hallucinated(2, 4)];
        assert!(inject_tags("abcdef", &overlapping).is_err());
        let unsorted = [AnnotatedSpan::hallucinated(3, 4), AnnotatedSpan::hallucinated(0, 1)];
        assert!(inject_tags("abcdef", &unsorted).is_err());
    }

    #[test]
    fn validation_counts_and_alternation() {
        assert!(validate_tags("plain text", 0));
        assert!(!validate_tags("a<HAL>b</HAL>c", 2));
        assert!(!validate_tags("a</HAL>b<HAL>c", 1));
        assert!(validate_tags("a<HAL>b</HAL>c", 1));
    }

    #[test]
    fn extraction_inverts_injection() {
        let (text, spans) = extract_spans("ab<HAL>cd</HAL>ef").unwrap();
        assert_eq!((text.as_str(), offsets(&spans)), ("abcdef", vec![(2, 4)]));
        let (text, spans) = extract_spans("no tags here").unwrap();
        assert_eq!((text.as_str(), spans.len()), ("no tags here", 0));
    }

    #[test]
    fn turkish_answer_markers_recover_stored_offsets() {
        let answer = table_one_answer();
        let mut tagged = String::new();
        for (i, c) in answer.chars().enumerate() {
            if i == 545 || i == 824 {
                tagged += "<HAL>";
            }
            if i == 596 || i == 906 {
                tagged += CLOSE_TAG;
            }
            tagged.push(c);
        }
        let (text, spans) = extract_spans(&tagged).unwrap();
        assert_eq!(text, answer);
        assert_eq!(offsets(&spans), [(545, 596), (824, 906)]);
        assert_eq!(char_slice(&text, 545, 596), SPAN_ONE);
    }

    #[test]
    fn malformed_markers_report_a_position() {
        let err = extract_spans("ab</HAL>cd").unwrap_err();
        assert_eq!(err.position(), Some(2));
    }

    /// Drops a closing marker from any answer mentioning "please".
    struct CorruptSecond;

    impl TranslationBackend for CorruptSecond {
        fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
            if request.kind == TextKind::Answer && request.text.contains("please") {
                return Ok(request.text.replacen(CLOSE_TAG, "", 1));
            }
            Ok(request.text.clone())
        }
    }

    #[test]
    fn identity_translation_only_changes_language() {
        let file = write_lines(&[table_one_line()]);
        let r = &load_corpus(file.path()).unwrap()[0];
        let out = translate_record(r, &IdentityBackend, "en", RetryPolicy::default()).unwrap();
        assert_eq!(out.language, "en");
        assert_eq!(RagRecord { language: "tr".into(), ..out }, *r);
    }

    #[test]
    fn corpus_translation_partitions_records() {
        let policy = RetryPolicy::default();
        let par = |n| NonZeroUsize::new(n).unwrap();
        let empty = translate_corpus(&[], &IdentityBackend, "tr", policy, par(3));
        assert!(empty.translated.is_empty() && empty.failures.is_empty());

        let three: Vec<_> = (0..3).map(|i| record(&format!("r{i}"), TaskType::QA, "some answer", &[(0, 4)])).collect();
        let out = translate_corpus(&three, &IdentityBackend, "tr", policy, par(3));
        assert_eq!(out.translated.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["r0", "r1", "r2"]);

        let two = [
            record("good", TaskType::QA, "fine answer", &[(0, 4)]),
            record("bad", TaskType::QA, "corrupt me please", &[(0, 7)]),
        ];
        let out = translate_corpus(&two, &CorruptSecond, "tr", policy, par(2));
        assert_eq!(out.translated.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].id, "bad");
        assert!(matches!(
            translate_record(&two[1], &CorruptSecond, "tr", policy),
            Err(TranslateError::TagProtocol { attempts: 3, .. })
        ));
    }
}

/// Whitespace-separated words; offsets in chars.
struct Words;

impl Tokenizer for Words {
    fn tokenize(&self, text: &str) -> Vec<RawToken> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.chars().chain(std::iter::once(' ')).enumerate() {
            match (start, c.is_whitespace()) {
                (None, false) => start = Some(i),
                (Some(s), true) => {
                    out.push(RawToken { id: 10, start: s, end: i, is_special: false });
                    start = None;
                }
                _ => {}
            }
        }
        out
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
        11
    }
    fn fingerprint(&self) -> String {
        "words".into()
    }
}

mod labels {
    use super::*;

    fn answer_labels(r: &RagRecord) -> Vec<TokenLabel> {
        let seq = build_labels(r, &Words, 64).unwrap();
        seq.labels[seq.answer_range.clone()].to_vec()
    }

    #[test]
    fn overlap_rule_on_three_tokens() {
        // tokens (0,3) (3,7) (8,12): "abc" + "defg" glued, then "hijk"
        struct Fixed;
        impl Tokenizer for Fixed {
            fn tokenize(&self, text: &str) -> Vec<RawToken> {
                if text.chars().count() == 12 {
                    [(0, 3), (3, 7), (8, 12)].iter().map(|&(start, end)| RawToken { id: 10, start, end, is_special: false }).collect()
                } else {
                    Words.tokenize(text)
                }
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
                11
            }
            fn fingerprint(&self) -> String {
                "fixed".into()
            }
        }
        let r = record("o", TaskType::QA, "abcdefg hijk", &[(3, 9)]);
        let seq = build_labels(&r, &Fixed, 64).unwrap();
        assert_eq!(seq.answer_values(), [0, 1, 1]);
        let spans = labels_to_spans(&seq, &[0, 1, 1]).unwrap();
        assert_eq!(spans.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(), [(3, 12)]);
        assert!(labels_to_spans(&seq, &[0, 0, 0]).unwrap().is_empty());
        assert!(labels_to_spans(&seq, &[0, 1]).is_err());
    }

    #[test]
    fn clean_and_fully_covered_answers() {
        let clean = record("c", TaskType::QA, "all good here", &[]);
        assert!(answer_labels(&clean).iter().all(|&l| l == TokenLabel::Supported));
        let full = record("f", TaskType::QA, "all made up", &[(0, 11)]);
        assert!(answer_labels(&full).iter().all(|&l| l == TokenLabel::Hallucinated));
    }

    #[test]
    fn overlong_answer_is_unencodable() {
        let r = record("long", TaskType::QA, "one two three four five", &[]);
        let err = build_labels(&r, &Words, 7).unwrap_err();
        assert!(err.to_string().contains("long"));
        // prompt is dropped before the answer is touched
        let seq = build_labels(&r, &Words, 8).unwrap();
        assert!(seq.truncated);
        assert_eq!(seq.answer_range.len(), 5);
    }

    #[test]
    fn length_summary() {
        // packed length = prompt (1) + answer words + 3 specials
        let one = record("a", TaskType::QA, &"w ".repeat(6), &[]);
        let s = length_stats(std::slice::from_ref(&one), &Words).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (10.0, 10.0, 10, 10));
        let two = [record("a", TaskType::QA, &"w ".repeat(6), &[]), record("b", TaskType::QA, &"w ".repeat(26), &[])];
        let s = length_stats(&two, &Words).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (20.0, 20.0, 10, 30));
        assert!(length_stats(&[], &Words).is_err());
    }
}

mod scoring {
    use super::*;

    fn prediction(probs: &[f64], offsets: &[(usize, usize)]) -> TokenPrediction {
        TokenPrediction {
            id: "p".into(),
            probs: probs.to_vec(),
            offsets: offsets
                .iter()
                .enumerate()
                .map(|(index, &(char_start, char_end))| haldetect::align::OffsetToken {
                    index,
                    id: 10,
                    char_start,
                    char_end,
                    segment: haldetect::align::Segment::Answer,
                    is_special: false,
                })
                .collect(),
        }
    }

    #[test]
    fn span_detection() {
        let offs = [(0, 3), (3, 7), (8, 12)];
        assert!(detect_spans(&prediction(&[0.0; 3], &offs), 0.5).is_empty());
        let spans = detect_spans(&prediction(&[0.1, 0.9, 0.8], &offs), 0.5);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (3, 12));
        assert!((spans[0].confidence - 0.85).abs() < 1e-12);
    }

    fn value(m: &Measure) -> f64 {
        m.value().expect("defined")
    }

    #[test]
    fn token_level_hand_computed() {
        let r = token_metrics(&[0, 1, 0, 1], &[0.6, 0.4, 0.5, 0.7], 0.5).unwrap();
        assert_eq!(r.confusion, Confusion { tp: 1, fp: 2, fn_: 1, tn: 0 });
        assert!((value(&r.class_1.p) - 1.0 / 3.0).abs() < 1e-12);
        assert!((value(&r.class_1.r) - 0.5).abs() < 1e-12);
        assert!((value(&r.class_1.f1) - 0.4).abs() < 1e-12);
        assert!((value(&r.auroc) - 0.5).abs() < 1e-12);

        let r = token_metrics(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9], 0.5).unwrap();
        assert_eq!(value(&r.auroc), 1.0);
        for m in [&r.class_0.f1, &r.class_1.f1, &r.class_0.p, &r.class_1.r, &r.macro_avg.f1] {
            assert_eq!(value(m), 1.0);
        }
        let single = token_metrics(&[1, 1], &[0.2, 0.9], 0.5).unwrap();
        assert!(matches!(single.auroc, Measure::Undefined { .. }));
    }

    fn line(id: &str, spans: usize, max_prob: f64) -> RecordPrediction {
        RecordPrediction {
            id: id.into(),
            spans: (0..spans).map(|_| PredictedSpan { start: 0, end: 1, confidence: max_prob }).collect(),
            tokens: vec![ScoredToken { start: 0, end: 1, prob: max_prob }],
        }
    }

    #[test]
    fn example_level_cases() {
        let clean = [record("a", TaskType::QA, "x", &[]), record("b", TaskType::QA, "y", &[])];
        let r = example_metrics(&clean, &[line("a", 0, 0.1), line("b", 0, 0.2)], 0.5).unwrap();
        assert_eq!((value(&r.class_0.p), value(&r.class_0.r)), (1.0, 1.0));
        assert!(matches!(r.class_1.r, Measure::Undefined { .. }));
        assert_eq!(r.class_1.support, 0);

        let mixed = [record("a", TaskType::QA, "x", &[(0, 1)]), record("b", TaskType::QA, "y", &[])];
        let r = example_metrics(&mixed, &[line("a", 1, 0.9), line("b", 0, 0.1)], 0.5).unwrap();
        assert_eq!((value(&r.class_0.f1), value(&r.class_1.f1)), (1.0, 1.0));

        let four: Vec<_> = [(true, "a"), (true, "b"), (false, "c"), (false, "d")]
            .iter()
            .map(|&(g, id)| record(id, TaskType::QA, "x", if g { &[(0, 1)] } else { &[] }))
            .collect();
        let preds = [line("a", 1, 0.9), line("b", 0, 0.4), line("c", 1, 0.6), line("d", 0, 0.1)];
        assert_eq!(value(&example_metrics(&four, &preds, 0.5).unwrap().auroc), 0.75);

        let err = example_metrics(&four, &preds[..3], 0.5).unwrap_err();
        assert!(err.to_string().contains('d'));
    }

    #[test]
    fn qa_only_corpus_matches_whole() {
        let corpus = [record("a", TaskType::QA, "x y", &[(0, 1)]), record("b", TaskType::QA, "x y", &[])];
        let preds: Vec<_> = ["a", "b"]
            .iter()
            .map(|id| RecordPrediction {
                id: id.to_string(),
                spans: vec![],
                tokens: vec![ScoredToken { start: 0, end: 1, prob: 0.7 }, ScoredToken { start: 2, end: 3, prob: 0.2 }],
            }
            .rethreshold(0.5))
            .collect();
        let report = sliced_report(&corpus, &preds, 0.5).unwrap();
        for level in [Level::Token, Level::Example] {
            let (qa, whole) = (report.get(level, Slice::QA).unwrap(), report.get(level, Slice::Whole).unwrap());
            assert_eq!((&qa.class_0, &qa.class_1, &qa.auroc), (&whole.class_0, &whole.class_1, &whole.auroc));
            assert!(report.get(level, Slice::Summary).is_none());
        }
        assert_eq!(report.omitted.len(), 4);
    }

    #[test]
    fn harmonic_mean_of_three_quarters_and_seven_tenths() {
        // 21 TP, 7 FP, 9 FN, 3 TN over one-char tokens of a Summary record
        let gold: Vec<u8> = [vec![1; 21], vec![0; 7], vec![1; 9], vec![0; 3]].concat();
        let pred: Vec<bool> = [vec![true; 21], vec![true; 7], vec![false; 9], vec![false; 3]].concat();
        let answer = "x".repeat(gold.len());
        let spans: Vec<(usize, usize)> = gold.iter().enumerate().filter(|(_, &g)| g == 1).map(|(i, _)| (i, i + 1)).collect();
        let r = record("h", TaskType::Summary, &answer, &spans);
        let p = RecordPrediction {
            id: "h".into(),
            spans: vec![],
            tokens: pred
                .iter()
                .enumerate()
                .map(|(i, &f)| ScoredToken { start: i, end: i + 1, prob: if f { 0.9 } else { 0.1 } })
                .collect(),
        };
        let report = sliced_report(&[r], &[p.rethreshold(0.5)], 0.5).unwrap();
        let whole = report.get(Level::Token, Slice::Whole).unwrap();
        assert!((value(&whole.class_1.p) - 0.75).abs() < 1e-12);
        assert!((value(&whole.class_1.r) - 0.70).abs() < 1e-12);
        assert!((value(&whole.class_1.f1) - 1.05 / 1.45).abs() < 1e-12);
        assert!((value(&whole.class_1.f1) - 0.7241).abs() < 1e-4);
    }
}
