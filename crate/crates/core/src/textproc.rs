//! Tokenization, sentence segmentation and header-field extraction.
//!
//! Structured fields are read from header lines (case-insensitive keys, one
//! per line):
//!
//! ```text
//! GAF at admission: <int>
//! GAF at discharge: <int>
//! GAF: <int>
//! Insight: <good|fair|poor>
//! Compliance: <yes|partial|none>
//! Estimated LOS: <int> days
//! ```

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Admission, NoteType};
use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../resources/abbreviations.txt");

/// Lowercased tokens. Whitespace separates tokens; punctuation becomes its
/// own token except hyphens and apostrophes between word characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if matches!(c, '-' | '\'' | '\u{2019}')
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(c.to_lowercase().collect());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub text: String,
    pub tokens: Vec<String>,
    /// Byte span `[start, end)` within the source text.
    pub span: (usize, usize),
}

/// Rule-based sentence splitter with an abbreviation guard list.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::from_list(DEFAULT_ABBREVIATIONS)
    }
}

impl Segmenter {
    /// One lowercase abbreviation per line, trailing period included.
    pub fn from_list(list: &str) -> Self {
        let abbreviations = list
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| if l.ends_with('.') { l } else { format!("{l}.") })
            .collect();
        Segmenter { abbreviations }
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }

    /// Sentence byte spans, trimmed of surrounding whitespace.
    pub fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let n = chars.len();
        let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < n {
            let (_, c) = chars[i];
            if start.is_none() {
                if !c.is_whitespace() {
                    start = Some(i);
                }
                i += 1;
                continue;
            }
            if c == '\n' {
                let mut j = i + 1;
                while j < n && chars[j].1.is_whitespace() && chars[j].1 != '\n' {
                    j += 1;
                }
                if j < n && chars[j].1 == '\n' {
                    push_span(text, &mut spans, byte_at(start.unwrap_or(i)), byte_at(i));
                    start = None;
                    i = j + 1;
                    continue;
                }
            }
            if matches!(c, '.' | '!' | '?') {
                let mut end = i + 1;
                while end < n && matches!(chars[end].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']') {
                    end += 1;
                }
                let mut j = end;
                while j < n && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let at_end = j >= n;
                let before_capital = j > end && j < n && chars[j].1.is_uppercase();
                if (at_end || before_capital) && !(c == '.' && self.guarded(&chars, start.unwrap_or(0), i)) {
                    push_span(text, &mut spans, byte_at(start.unwrap_or(i)), byte_at(end));
                    start = None;
                    i = end;
                    continue;
                }
            }
            i += 1;
        }
        if let Some(s) = start {
            push_span(text, &mut spans, byte_at(s), text.len());
        }
        spans
    }

    /// Whether the word ending at the period `dot` is a guarded abbreviation.
    fn guarded(&self, chars: &[(usize, char)], sentence_start: usize, dot: usize) -> bool {
        let mut k = dot;
        while k > sentence_start && !chars[k - 1].1.is_whitespace() {
            k -= 1;
        }
        let word: String = chars[k..=dot].iter().map(|&(_, c)| c).collect();
        let word = word.trim_start_matches(['(', '"', '\'', '[']);
        self.is_abbreviation(word)
    }

    pub fn split(&self, text: &str) -> Vec<TokenizedSentence> {
        self.spans(text)
            .into_iter()
            .map(|(s, e)| {
                let raw = &text[s..e];
                TokenizedSentence {
                    text: raw.to_string(),
                    tokens: tokenize(raw),
                    span: (s, e),
                }
            })
            .collect()
    }
}

fn push_span(text: &str, spans: &mut Vec<(usize, usize)>, start: usize, end: usize) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

fn default_segmenter() -> &'static Segmenter {
    static SEG: OnceLock<Segmenter> = OnceLock::new();
    SEG.get_or_init(Segmenter::default)
}

/// Split with the shipped abbreviation list.
pub fn split_sentences(text: &str) -> Vec<TokenizedSentence> {
    default_segmenter().split(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insight {
    Good,
    Fair,
    Poor,
}

impl Insight {
    pub const LEVELS: &'static [Insight] = &[Insight::Good, Insight::Fair, Insight::Poor];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Some(Insight::Good),
            "fair" => Some(Insight::Fair),
            "poor" => Some(Insight::Poor),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Insight::Good => "good",
            Insight::Fair => "fair",
            Insight::Poor => "poor",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Insight::Good => "Good",
            Insight::Fair => "Fair",
            Insight::Poor => "Poor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    Yes,
    Partial,
    None,
}

impl Compliance {
    pub const LEVELS: &'static [Compliance] = &[Compliance::Yes, Compliance::Partial, Compliance::None];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yes" => Some(Compliance::Yes),
            "partial" => Some(Compliance::Partial),
            "none" => Some(Compliance::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compliance::Yes => "yes",
            Compliance::Partial => "partial",
            Compliance::None => "none",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Compliance::Yes => "Yes",
            Compliance::Partial => "Partial",
            Compliance::None => "None",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredFields {
    pub gaf_admission: Option<u8>,
    pub gaf_discharge: Option<u8>,
    /// One entry per note: the note's `GAF:` value.
    pub gaf_per_note: Vec<Option<u8>>,
    pub insight: Option<Insight>,
    pub compliance: Option<Compliance>,
    pub estimated_los_days: Option<u32>,
}

struct HeaderPatterns {
    gaf_admission: Regex,
    gaf_discharge: Regex,
    gaf: Regex,
    insight: Regex,
    compliance: Regex,
    estimated_los: Regex,
    los_value: Regex,
}

fn patterns() -> &'static HeaderPatterns {
    static P: OnceLock<HeaderPatterns> = OnceLock::new();
    P.get_or_init(|| {
        let key = |k: &str| Regex::new(&format!(r"(?i)^\s*{k}\s*:\s*(.*?)\s*$")).expect("static regex");
        HeaderPatterns {
            gaf_admission: key(r"gaf\s+at\s+admission"),
            gaf_discharge: key(r"gaf\s+at\s+discharge"),
            gaf: key(r"gaf"),
            insight: key(r"insight"),
            compliance: key(r"compliance"),
            estimated_los: key(r"estimated\s+los"),
            los_value: Regex::new(r"(?i)^(\d+)\s+days?$").expect("static regex"),
        }
    })
}

fn parse_gaf(note_id: &str, key: &str, value: &str) -> Result<u8> {
    let field_err = |message: String| Error::Field {
        note_id: note_id.to_string(),
        message,
    };
    let score: i64 = value
        .parse()
        .map_err(|_| field_err(format!("{key}: expected an integer, got `{value}`")))?;
    if !(1..=100).contains(&score) {
        return Err(field_err(format!("{key}: {score} outside the GAF range 1-100")));
    }
    Ok(score as u8)
}

/// Header fields of a single note. The first occurrence of each key wins.
pub fn extract_structured(note_id: &str, text: &str) -> Result<StructuredFields> {
    let p = patterns();
    let mut out = StructuredFields::default();
    let mut gaf_note = None;
    let field_err = |message: String| Error::Field {
        note_id: note_id.to_string(),
        message,
    };
    for line in text.lines() {
        if let Some(c) = p.gaf_admission.captures(line) {
            if out.gaf_admission.is_none() {
                out.gaf_admission = Some(parse_gaf(note_id, "GAF at admission", &c[1])?);
            }
        } else if let Some(c) = p.gaf_discharge.captures(line) {
            if out.gaf_discharge.is_none() {
                out.gaf_discharge = Some(parse_gaf(note_id, "GAF at discharge", &c[1])?);
            }
        } else if let Some(c) = p.gaf.captures(line) {
            if gaf_note.is_none() {
                gaf_note = Some(parse_gaf(note_id, "GAF", &c[1])?);
            }
        } else if let Some(c) = p.insight.captures(line) {
            if out.insight.is_none() {
                out.insight = Some(
                    Insight::parse(&c[1])
                        .ok_or_else(|| field_err(format!("Insight: unrecognized value `{}`", &c[1])))?,
                );
            }
        } else if let Some(c) = p.compliance.captures(line) {
            if out.compliance.is_none() {
                out.compliance = Some(
                    Compliance::parse(&c[1])
                        .ok_or_else(|| field_err(format!("Compliance: unrecognized value `{}`", &c[1])))?,
                );
            }
        } else if let Some(c) = p.estimated_los.captures(line) {
            if out.estimated_los_days.is_none() {
                let days = p
                    .los_value
                    .captures(&c[1])
                    .and_then(|m| m[1].parse().ok())
                    .ok_or_else(|| field_err(format!("Estimated LOS: expected `<int> days`, got `{}`", &c[1])))?;
                out.estimated_los_days = Some(days);
            }
        }
    }
    out.gaf_per_note = vec![gaf_note];
    Ok(out)
}

/// Admission-level fields: GAF at admission from the earliest note stating
/// it, GAF at discharge from the discharge summary, insight and compliance
/// from the latest note stating them, estimated LOS from the earliest.
pub fn resolve_admission(admission: &Admission) -> Result<StructuredFields> {
    let mut out = StructuredFields::default();
    for note in &admission.notes {
        let f = extract_structured(&note.note_id, &note.text)?;
        out.gaf_admission = out.gaf_admission.or(f.gaf_admission);
        if note.note_type == NoteType::DischargeSummary {
            out.gaf_discharge = out.gaf_discharge.or(f.gaf_discharge);
        }
        out.insight = f.insight.or(out.insight);
        out.compliance = f.compliance.or(out.compliance);
        out.estimated_los_days = out.estimated_los_days.or(f.estimated_los_days);
        out.gaf_per_note.extend(f.gaf_per_note);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Pt denies SI."), toks(&["pt", "denies", "si", "."]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("self-harm risk"), toks(&["self-harm", "risk"]));
        assert_eq!(tokenize("patient's (mood)"), toks(&["patient's", "(", "mood", ")"]));
        assert_eq!(tokenize("GAF: 45"), toks(&["gaf", ":", "45"]));
        assert_eq!(tokenize("- trailing-"), toks(&["-", "trailing", "-"]));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sentences("Sleeping well. Appetite poor.").len(), 2);
        assert_eq!(split_sentences("Seen by Dr. Smith today.").len(), 1);
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("  \n\n ").is_empty());
    }

    #[test]
    fn blank_lines_split() {
        let s = split_sentences("GAF: 40\nInsight: poor\n\nPatient calm. No events overnight");
        let texts: Vec<_> = s.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["GAF: 40\nInsight: poor", "Patient calm.", "No events overnight"]);
    }

    #[test]
    fn lowercase_after_period_does_not_split() {
        assert_eq!(split_sentences("Dose was 2.5 mg. then reduced.").len(), 1);
        assert_eq!(split_sentences("Really? Yes! Fine.").len(), 3);
    }

    #[test]
    fn spans_point_into_source() {
        let text = "  First one.  Second one!\n\nThird ";
        for s in split_sentences(text) {
            assert_eq!(&text[s.span.0..s.span.1], s.text);
        }
    }

    #[test]
    fn header_fields() {
        let f = extract_structured("n1", "GAF at admission: 45\nInsight: poor\nCompliance: partial").unwrap();
        assert_eq!(f.gaf_admission, Some(45));
        assert_eq!(f.insight, Some(Insight::Poor));
        assert_eq!(f.compliance, Some(Compliance::Partial));
        let f = extract_structured("n2", "gaf: 30\nESTIMATED LOS: 12 days\nGAF at discharge: 61").unwrap();
        assert_eq!(f.gaf_per_note, vec![Some(30)]);
        assert_eq!(f.estimated_los_days, Some(12));
        assert_eq!(f.gaf_discharge, Some(61));
    }

    #[test]
    fn gaf_out_of_range_is_error() {
        let err = extract_structured("n9", "GAF at admission: 150").unwrap_err();
        assert!(err.to_string().contains("n9"), "{err}");
        assert!(extract_structured("n9", "GAF: 0").is_err());
    }

    #[test]
    fn unrecognized_enum_is_error() {
        assert!(extract_structured("n1", "Insight: excellent").is_err());
        assert!(extract_structured("n1", "Compliance: sometimes").is_err());
        assert!(extract_structured("n1", "Estimated LOS: two weeks").is_err());
    }

    #[test]
    fn first_match_wins() {
        let f = extract_structured("n1", "Insight: good\nInsight: poor").unwrap();
        assert_eq!(f.insight, Some(Insight::Good));
    }
}
