//! EHR object model, JSONL ingestion and 30-day readmission labels.
//!
//! A corpus file holds one patient per line; admissions and their notes are
//! nested inside the patient record.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Readmission window in days, inclusive.
pub const READMISSION_WINDOW_DAYS: i64 = 30;

/// Closed categorical enum with a lowercase wire form and a lenient parser
/// that maps unrecognized values to the fallback level.
macro_rules! categorical {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $wire:literal),+ $(,)? } fallback $fallback:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const LEVELS: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $wire),+
                }
            }

            /// Display name used for one-hot column names.
            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }

            pub fn parse_lenient(s: &str) -> Self {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($wire) {
                    return $name::$variant;
                })+
                $name::$fallback
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let raw = Option::<String>::deserialize(d)?;
                Ok(raw.map(|s| Self::parse_lenient(&s)).unwrap_or($name::$fallback))
            }
        }
    };
}

categorical!(Gender { Male => "male", Female => "female", Other => "other", Unknown => "unknown" } fallback Unknown);
categorical!(Race {
    White => "white",
    Black => "black",
    Asian => "asian",
    Hispanic => "hispanic",
    Other => "other",
    Unknown => "unknown",
} fallback Unknown);
categorical!(MaritalStatus { Single => "single", Married => "married", Other => "other", Unknown => "unknown" } fallback Unknown);
categorical!(
    /// Used for veteran status and suicide risk.
    YesNoUnknown { Yes => "yes", No => "no", Unknown => "unknown" } fallback Unknown
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    Admission,
    Progress,
    DischargeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub note_type: NoteType,
    pub timestamp: NaiveDateTime,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admission_id: String,
    /// Filled from the enclosing patient record on load.
    #[serde(skip)]
    pub patient_id: String,
    pub admit_date: NaiveDate,
    pub discharge_date: NaiveDate,
    pub suicide_risk: YesNoUnknown,
    pub notes: Vec<Note>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_readmitted_30d: Option<bool>,
}

impl Admission {
    pub fn length_of_stay(&self) -> i64 {
        (self.discharge_date - self.admit_date).num_days()
    }

    pub fn discharge_summary(&self) -> Option<&Note> {
        self.notes
            .iter()
            .find(|n| n.note_type == NoteType::DischargeSummary)
    }

    pub fn readmitted(&self) -> bool {
        self.label_readmitted_30d.unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub gender: Gender,
    pub race: Race,
    pub marital_status: MaritalStatus,
    pub veteran: YesNoUnknown,
    pub birth_date: NaiveDate,
    #[serde(default)]
    pub admissions: Vec<Admission>,
}

impl Patient {
    pub fn age_at(&self, date: NaiveDate) -> Option<u32> {
        date.years_since(self.birth_date)
    }
}

/// Patients with their admissions grouped underneath, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub patients: Vec<Patient>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_patients: usize,
    pub n_notes: usize,
    pub n_admissions: usize,
    pub n_readmitted: usize,
    pub total_tokens: usize,
    pub mean_tokens_per_note: f64,
    pub mean_notes_per_admission: f64,
    pub mean_tokens_per_admission: f64,
    pub readmission_rate: f64,
}

impl Corpus {
    pub fn admissions(&self) -> impl Iterator<Item = (&Patient, &Admission)> {
        self.patients
            .iter()
            .flat_map(|p| p.admissions.iter().map(move |a| (p, a)))
    }

    pub fn n_admissions(&self) -> usize {
        self.patients.iter().map(|p| p.admissions.len()).sum()
    }

    /// Check every type invariant, naming the offending patient or admission.
    pub fn validate(&self) -> Result<()> {
        let mut patient_ids = HashSet::new();
        let mut admission_ids = HashSet::new();
        for p in &self.patients {
            if !patient_ids.insert(p.patient_id.as_str()) {
                return Err(Error::Invariant(format!("duplicate patient_id {}", p.patient_id)));
            }
            for (i, a) in p.admissions.iter().enumerate() {
                let ctx = || format!("patient {} admission {}", p.patient_id, a.admission_id);
                if !admission_ids.insert(a.admission_id.as_str()) {
                    return Err(Error::Invariant(format!("{}: duplicate admission_id", ctx())));
                }
                if a.patient_id != p.patient_id {
                    return Err(Error::Invariant(format!(
                        "{}: patient_id {} does not resolve",
                        ctx(),
                        a.patient_id
                    )));
                }
                if a.discharge_date < a.admit_date {
                    return Err(Error::Invariant(format!("{}: discharge before admit", ctx())));
                }
                match p.age_at(a.admit_date) {
                    Some(age) if (18..=100).contains(&age) => {}
                    other => {
                        return Err(Error::Invariant(format!(
                            "{}: age {:?} at admission outside 18-100",
                            ctx(),
                            other
                        )))
                    }
                }
                if a.notes.is_empty() {
                    return Err(Error::Invariant(format!("{}: no notes", ctx())));
                }
                let n_summaries = a
                    .notes
                    .iter()
                    .filter(|n| n.note_type == NoteType::DischargeSummary)
                    .count();
                if n_summaries != 1 {
                    return Err(Error::Invariant(format!(
                        "{}: expected exactly one discharge summary, found {}",
                        ctx(),
                        n_summaries
                    )));
                }
                for w in a.notes.windows(2) {
                    if w[1].timestamp < w[0].timestamp {
                        return Err(Error::Invariant(format!(
                            "{}: notes not sorted by timestamp at {}",
                            ctx(),
                            w[1].note_id
                        )));
                    }
                }
                for n in &a.notes {
                    let day = n.timestamp.date();
                    if day < a.admit_date || day > a.discharge_date {
                        return Err(Error::Invariant(format!(
                            "{}: note {} timestamp outside the stay",
                            ctx(),
                            n.note_id
                        )));
                    }
                    if n.text.trim().is_empty() {
                        return Err(Error::Invariant(format!(
                            "{}: note {} has empty text",
                            ctx(),
                            n.note_id
                        )));
                    }
                }
                if i > 0 {
                    let prev = &p.admissions[i - 1];
                    if a.admit_date < prev.discharge_date {
                        return Err(Error::Invariant(format!(
                            "patient {}: admission {} overlaps admission {}",
                            p.patient_id, a.admission_id, prev.admission_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize to JSONL, one patient per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.patients {
            let line = serde_json::to_string(p).map_err(|e| Error::Invalid(e.to_string()))?;
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| Error::io("<corpus writer>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut patients = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<corpus reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut p: Patient = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            for a in &mut p.admissions {
                a.patient_id = p.patient_id.clone();
            }
            p.admissions.sort_by_key(|a| a.admit_date);
            patients.push(p);
        }
        let corpus = Corpus { patients };
        corpus.validate()?;
        Ok(corpus)
    }
}

/// Load and validate a JSONL corpus.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Label each admission: readmitted iff the patient's next admission begins
/// at most 30 days after this discharge. A patient's last admission keeps a
/// charted label if the record carries one, otherwise it is `false`.
pub fn derive_labels(mut corpus: Corpus) -> Corpus {
    for p in &mut corpus.patients {
        p.admissions.sort_by_key(|a| a.admit_date);
        let n = p.admissions.len();
        for i in 0..n {
            let label = if i + 1 < n {
                let gap = (p.admissions[i + 1].admit_date - p.admissions[i].discharge_date).num_days();
                gap <= READMISSION_WINDOW_DAYS
            } else {
                p.admissions[i].label_readmitted_30d.unwrap_or(false)
            };
            p.admissions[i].label_readmitted_30d = Some(label);
        }
    }
    corpus
}

/// Corpus statistics with token counts from `count_tokens`.
pub fn corpus_stats<F: Fn(&str) -> usize>(corpus: &Corpus, count_tokens: F) -> CorpusStats {
    let mut stats = CorpusStats {
        n_patients: corpus.patients.len(),
        ..CorpusStats::default()
    };
    for (_, a) in corpus.admissions() {
        stats.n_admissions += 1;
        stats.n_readmitted += usize::from(a.readmitted());
        stats.n_notes += a.notes.len();
        stats.total_tokens += a.notes.iter().map(|n| count_tokens(&n.text)).sum::<usize>();
    }
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    stats.mean_tokens_per_note = ratio(stats.total_tokens as f64, stats.n_notes);
    stats.mean_notes_per_admission = ratio(stats.n_notes as f64, stats.n_admissions);
    stats.mean_tokens_per_admission = ratio(stats.total_tokens as f64, stats.n_admissions);
    stats.readmission_rate = ratio(stats.n_readmitted as f64, stats.n_admissions);
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn admission(id: &str, admit: &str, discharge: &str) -> Admission {
        let note = |nid: &str, ty, day: &str| Note {
            note_id: format!("{id}-{nid}"),
            note_type: ty,
            timestamp: d(day).and_hms_opt(9, 0, 0).unwrap(),
            text: "Patient seen.".into(),
        };
        Admission {
            admission_id: id.into(),
            patient_id: "p1".into(),
            admit_date: d(admit),
            discharge_date: d(discharge),
            suicide_risk: YesNoUnknown::No,
            notes: vec![
                note("n1", NoteType::Admission, admit),
                note("n2", NoteType::DischargeSummary, discharge),
            ],
            label_readmitted_30d: None,
        }
    }

    fn patient(admissions: Vec<Admission>) -> Patient {
        Patient {
            patient_id: "p1".into(),
            gender: Gender::Female,
            race: Race::White,
            marital_status: MaritalStatus::Single,
            veteran: YesNoUnknown::No,
            birth_date: d("1990-05-01"),
            admissions,
        }
    }

    fn labels(c: &Corpus) -> Vec<Option<bool>> {
        c.admissions().map(|(_, a)| a.label_readmitted_30d).collect()
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = Corpus::from_reader("".as_bytes()).unwrap();
        assert!(c.patients.is_empty());
    }

    #[test]
    fn two_admissions_load() {
        let c = Corpus {
            patients: vec![patient(vec![
                admission("a1", "2020-01-01", "2020-01-10"),
                admission("a2", "2020-03-01", "2020-03-05"),
            ])],
        };
        let back = Corpus::from_reader(c.to_jsonl_string().as_bytes()).unwrap();
        assert_eq!(back.n_admissions(), 2);
        assert_eq!(back, c);
    }

    #[test]
    fn overlapping_admissions_name_patient() {
        let c = Corpus {
            patients: vec![patient(vec![
                admission("a1", "2020-01-01", "2020-01-10"),
                admission("a2", "2020-01-05", "2020-01-20"),
            ])],
        };
        let err = Corpus::from_reader(c.to_jsonl_string().as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("overlaps"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let c = Corpus {
            patients: vec![patient(vec![admission("a1", "2020-01-01", "2020-01-10")])],
        };
        let text = format!("{}{{not json\n", c.to_jsonl_string());
        match Corpus::from_reader(text.as_bytes()).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_discharge_summary_rejected() {
        let mut a = admission("a1", "2020-01-01", "2020-01-10");
        a.notes.pop();
        let c = Corpus { patients: vec![patient(vec![a])] };
        assert!(c.validate().unwrap_err().to_string().contains("discharge summary"));
    }

    #[test]
    fn unknown_categorical_maps_to_unknown() {
        let c = Corpus {
            patients: vec![patient(vec![admission("a1", "2020-01-01", "2020-01-10")])],
        };
        let text = c.to_jsonl_string().replace("\"single\"", "\"widowed\"");
        let back = Corpus::from_reader(text.as_bytes()).unwrap();
        assert_eq!(back.patients[0].marital_status, MaritalStatus::Unknown);
    }

    #[test]
    fn single_admission_is_not_readmitted() {
        let c = Corpus {
            patients: vec![patient(vec![admission("a1", "2020-01-01", "2020-01-10")])],
        };
        assert_eq!(labels(&derive_labels(c)), vec![Some(false)]);
    }

    #[test]
    fn gap_of_24_days_is_readmission() {
        let c = Corpus {
            patients: vec![patient(vec![
                admission("a1", "2019-12-20", "2020-01-01"),
                admission("a2", "2020-01-25", "2020-02-01"),
            ])],
        };
        assert_eq!(labels(&derive_labels(c)), vec![Some(true), Some(false)]);
    }

    #[test]
    fn thirty_day_boundary_is_inclusive() {
        let c = Corpus {
            patients: vec![patient(vec![
                admission("a1", "2019-12-20", "2020-01-01"),
                admission("a2", "2020-01-31", "2020-02-03"),
                admission("a3", "2020-03-05", "2020-03-08"),
            ])],
        };
        // 30 days then 31 days.
        assert_eq!(labels(&derive_labels(c)), vec![Some(true), Some(false), Some(false)]);
    }

    #[test]
    fn charted_label_on_last_admission_is_kept() {
        let mut a = admission("a1", "2020-01-01", "2020-01-10");
        a.label_readmitted_30d = Some(true);
        let c = Corpus { patients: vec![patient(vec![a])] };
        assert_eq!(labels(&derive_labels(c)), vec![Some(true)]);
    }

    #[test]
    fn stats_on_tiny_corpus() {
        let mut a = admission("a1", "2020-01-01", "2020-01-10");
        a.notes.remove(0);
        a.notes[0].text = "one two three four five six seven eight nine ten".into();
        let c = derive_labels(Corpus { patients: vec![patient(vec![a])] });
        let s = corpus_stats(&c, |t| t.split_whitespace().count());
        assert_eq!(s.mean_tokens_per_note, 10.0);
        assert_eq!(s.n_admissions, 1);
    }

    #[test]
    fn stats_rate_one_third() {
        let c = derive_labels(Corpus {
            patients: vec![patient(vec![
                admission("a1", "2020-01-01", "2020-01-10"),
                admission("a2", "2020-01-20", "2020-01-25"),
                admission("a3", "2020-06-01", "2020-06-05"),
            ])],
        });
        let s = corpus_stats(&c, |t| t.split_whitespace().count());
        assert_eq!(s.n_readmitted, 1);
        assert!((s.readmission_rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_stats_are_zero() {
        let s = corpus_stats(&Corpus::default(), |_| 0);
        assert_eq!(s, CorpusStats::default());
    }
}
