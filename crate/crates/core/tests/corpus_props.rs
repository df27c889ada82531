use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use readmit::corpus::{derive_labels, Admission, Corpus, Gender, MaritalStatus, Note, NoteType, Patient, Race, YesNoUnknown};
use readmit::syngen::{self, CountRange, GenConfig};
use readmit::textproc;

fn small() -> GenConfig {
    GenConfig {
        n_patients: 12,
        tokens_per_note: CountRange::new(80, 200, 140.0),
        ..GenConfig::default()
    }
}

#[test]
fn generated_corpus_survives_jsonl_round_trip() {
    let corpus = syngen::generate(&small()).unwrap();
    corpus.validate().unwrap();
    let text = corpus.to_jsonl_string();
    let back = Corpus::from_reader(text.as_bytes()).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(back.to_jsonl_string(), text);
    assert_eq!(derive_labels(back.clone()), back);
}

#[test]
fn generator_is_invariant_to_workers() {
    let cfg = small();
    let (a, ta) = syngen::generate_with_truth(&cfg, 1).unwrap();
    let (b, tb) = syngen::generate_with_truth(&cfg, 5).unwrap();
    assert_eq!(a.to_jsonl_string(), b.to_jsonl_string());
    assert_eq!(ta.to_jsonl(), tb.to_jsonl());
}

fn day(d: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + Duration::days(d)
}

fn admission(id: &str, start: i64, los: i64) -> Admission {
    let at = |d: i64, h: u32| -> NaiveDateTime { day(d).and_hms_opt(h, 0, 0).unwrap() };
    Admission {
        admission_id: id.into(),
        patient_id: "P1".into(),
        admit_date: day(start),
        discharge_date: day(start + los),
        suicide_risk: YesNoUnknown::Unknown,
        notes: vec![Note {
            note_id: format!("{id}-N01"),
            note_type: NoteType::DischargeSummary,
            timestamp: at(start + los, 12),
            text: "Patient discharged.".into(),
        }],
        label_readmitted_30d: None,
    }
}

proptest! {
    #[test]
    fn label_is_gap_within_window(los in 0i64..20, gap in 0i64..90) {
        let p = Patient {
            patient_id: "P1".into(),
            gender: Gender::Unknown,
            race: Race::Unknown,
            marital_status: MaritalStatus::Unknown,
            veteran: YesNoUnknown::Unknown,
            birth_date: day(-12_000),
            admissions: vec![admission("A1", 0, los), admission("A2", los + gap, 3)],
        };
        let c = derive_labels(Corpus { patients: vec![p] });
        prop_assert!(c.validate().is_ok());
        let a = &c.patients[0].admissions;
        prop_assert_eq!(a[0].label_readmitted_30d, Some(gap <= 30));
        prop_assert_eq!(a[1].label_readmitted_30d, Some(false));
    }

    #[test]
    fn tokenizer_and_splitter_never_panic(text in "\\PC{0,200}") {
        let _ = textproc::tokenize(&text);
        for s in textproc::split_sentences(&text) {
            prop_assert!(s.span.0 <= s.span.1 && s.span.1 <= text.len());
            prop_assert!(text.is_char_boundary(s.span.0) && text.is_char_boundary(s.span.1));
        }
        let _ = textproc::extract_structured("N", &text);
    }

    #[test]
    fn sentence_tokens_partition_text_tokens(words in prop::collection::vec("[a-z]{1,8}", 1..30), breaks in prop::collection::vec(any::<bool>(), 30)) {
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            text.push_str(w);
            text.push_str(if breaks[i] { ". " } else { " " });
        }
        let flat: Vec<String> = textproc::split_sentences(&text).into_iter().flat_map(|s| s.tokens).collect();
        prop_assert_eq!(flat, textproc::tokenize(&text));
    }
}
