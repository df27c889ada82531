//! The 45-feature admission vector and its one-hot encoded matrix.
//!
//! Features come in four blocks: sociodemographics, past history, the
//! current admission's structured fields, and the fourteen text-derived
//! domain features. Current suicide risk is the 45th feature.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{Admission, Gender, MaritalStatus, NoteType, Patient, Race, YesNoUnknown};
use crate::domains::{AdmissionDomainSummary, RiskDomain};
use crate::error::{Error, Result};
use crate::textproc::{count_tokens, Compliance, Insight, StructuredFields};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
    Missing,
}

impl FeatureValue {
    fn num(v: Option<f64>) -> Self {
        v.map_or(FeatureValue::Missing, FeatureValue::Num)
    }

    fn cat(v: Option<&str>) -> Self {
        v.map_or(FeatureValue::Missing, |s| FeatureValue::Cat(s.to_string()))
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Sociodemographic,
    History,
    CurrentStructured,
    CurrentUnstructured,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// `nullable` numerics get a `<name>__missing` indicator column.
    Numeric { nullable: bool },
    /// Levels in column order; `fallback` receives missing and unseen values.
    Categorical { levels: Vec<String>, fallback: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub block: Block,
    pub kind: FeatureKind,
}

pub const MISSING_LEVEL: &str = "Missing";
pub const MISSING_SUFFIX: &str = "__missing";
pub const SENTENCE_PREFIX: &str = "sentences_";
pub const SENTIMENT_PREFIX: &str = "sentiment_";

fn numeric(name: &str, block: Block, nullable: bool) -> FeatureDef {
    FeatureDef {
        name: name.to_string(),
        block,
        kind: FeatureKind::Numeric { nullable },
    }
}

fn categorical(name: &str, block: Block, levels: &[&str], fallback: &str) -> FeatureDef {
    let mut levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
    if !levels.iter().any(|l| l == fallback) {
        levels.push(fallback.to_string());
    }
    FeatureDef {
        name: name.to_string(),
        block,
        kind: FeatureKind::Categorical {
            levels,
            fallback: fallback.to_string(),
        },
    }
}

pub fn sentence_feature(d: RiskDomain) -> String {
    format!("{SENTENCE_PREFIX}{}", d.name())
}

pub fn sentiment_feature(d: RiskDomain) -> String {
    format!("{SENTIMENT_PREFIX}{}", d.name())
}

/// The un-expanded feature list, in schema order.
pub fn feature_defs() -> Vec<FeatureDef> {
    use Block::*;
    let gender: Vec<&str> = Gender::LEVELS.iter().map(|g| g.label()).collect();
    let race: Vec<&str> = Race::LEVELS.iter().map(|g| g.label()).collect();
    let marital: Vec<&str> = MaritalStatus::LEVELS.iter().map(|g| g.label()).collect();
    let yn: Vec<&str> = YesNoUnknown::LEVELS.iter().map(|g| g.label()).collect();
    let insight: Vec<&str> = Insight::LEVELS.iter().map(|g| g.label()).collect();
    let compliance: Vec<&str> = Compliance::LEVELS.iter().map(|g| g.label()).collect();
    let mut defs = vec![
        numeric("age", Sociodemographic, true),
        categorical("gender", Sociodemographic, &gender, "Unknown"),
        categorical("race", Sociodemographic, &race, "Unknown"),
        categorical("marital_status", Sociodemographic, &marital, "Unknown"),
        categorical("veteran", Sociodemographic, &yn, "Unknown"),
        numeric("history_of_suicidality", History, true),
        numeric("n_past_admissions", History, false),
        numeric("avg_past_los", History, true),
        numeric("avg_days_between_admissions", History, true),
        numeric("prev_30day_readmission", History, true),
        numeric("n_past_readmissions", History, false),
        numeric("readmission_ratio", History, true),
        numeric("avg_past_gaf_admission", History, true),
        numeric("avg_past_gaf_discharge", History, true),
        categorical("mode_past_insight", History, &insight, MISSING_LEVEL),
        categorical("mode_past_compliance", History, &compliance, MISSING_LEVEL),
        numeric("n_notes", CurrentStructured, false),
        numeric("n_tokens", CurrentStructured, false),
        numeric("n_tokens_discharge_summary", CurrentStructured, false),
        numeric("avg_note_length", CurrentStructured, false),
        numeric("gaf_admission", CurrentStructured, true),
        numeric("gaf_discharge", CurrentStructured, true),
        numeric("gaf_difference", CurrentStructured, true),
        numeric("mean_gaf_all_notes", CurrentStructured, true),
        categorical("insight", CurrentStructured, &insight, MISSING_LEVEL),
        categorical("compliance", CurrentStructured, &compliance, MISSING_LEVEL),
        numeric("estimated_los", CurrentStructured, true),
        numeric("actual_los", CurrentStructured, false),
        numeric("los_difference", CurrentStructured, true),
        numeric("is_first_admission", CurrentStructured, false),
    ];
    for d in RiskDomain::ALL {
        defs.push(numeric(&sentence_feature(d), CurrentUnstructured, false));
    }
    for d in RiskDomain::ALL {
        defs.push(numeric(&sentiment_feature(d), CurrentUnstructured, false));
    }
    defs.push(categorical("suicide_risk", CurrentStructured, &yn, "Unknown"));
    defs
}

/// Past-history block of one admission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryFeatures {
    pub history_of_suicidality: Option<bool>,
    pub n_past_admissions: usize,
    pub avg_past_los: Option<f64>,
    pub avg_days_between_admissions: Option<f64>,
    pub prev_30day_readmission: Option<bool>,
    pub n_past_readmissions: usize,
    pub readmission_ratio: Option<f64>,
    pub avg_past_gaf_admission: Option<f64>,
    pub avg_past_gaf_discharge: Option<f64>,
    pub mode_past_insight: Option<Insight>,
    pub mode_past_compliance: Option<Compliance>,
}

impl HistoryFeatures {
    pub fn is_first_admission(&self) -> bool {
        self.n_past_admissions == 0
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Most frequent value; ties go to the most recent of the tied values.
fn recent_mode<T: Copy + Ord>(values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let mut counts: BTreeMap<T, (usize, usize)> = BTreeMap::new();
    for (pos, v) in values.enumerate() {
        if let Some(v) = v {
            let e = counts.entry(v).or_insert((0, 0));
            e.0 += 1;
            e.1 = pos;
        }
    }
    counts.into_iter().max_by_key(|(_, (n, last))| (*n, *last)).map(|(v, _)| v)
}

/// History features from prior admissions (chronological, with labels
/// already derived) and the current admit date.
pub fn history_features(prior: &[(&Admission, &StructuredFields)], admit_date: NaiveDate) -> HistoryFeatures {
    let n = prior.len();
    if n == 0 {
        return HistoryFeatures::default();
    }
    let gaps = (0..n).map(|i| {
        let next = if i + 1 < n { prior[i + 1].0.admit_date } else { admit_date };
        (next - prior[i].0.discharge_date).num_days() as f64
    });
    let n_readmit = prior.iter().filter(|(a, _)| a.readmitted()).count();
    HistoryFeatures {
        history_of_suicidality: Some(prior.iter().any(|(a, _)| a.suicide_risk == YesNoUnknown::Yes)),
        n_past_admissions: n,
        avg_past_los: mean(prior.iter().map(|(a, _)| a.length_of_stay() as f64)),
        avg_days_between_admissions: mean(gaps),
        prev_30day_readmission: Some(prior[n - 1].0.readmitted()),
        n_past_readmissions: n_readmit,
        readmission_ratio: Some(n_readmit as f64 / n as f64),
        avg_past_gaf_admission: mean(prior.iter().filter_map(|(_, f)| f.gaf_admission.map(f64::from))),
        avg_past_gaf_discharge: mean(prior.iter().filter_map(|(_, f)| f.gaf_discharge.map(f64::from))),
        mode_past_insight: recent_mode(prior.iter().map(|(_, f)| f.insight)),
        mode_past_compliance: recent_mode(prior.iter().map(|(_, f)| f.compliance)),
    }
}

/// Named feature values of one admission, aligned to [`feature_defs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionFeatures {
    pub admission_id: String,
    pub patient_id: String,
    pub label: bool,
    pub values: Vec<FeatureValue>,
}

impl AdmissionFeatures {
    pub fn get(&self, name: &str) -> Option<&FeatureValue> {
        feature_index(name).map(|i| &self.values[i])
    }
}

fn feature_index(name: &str) -> Option<usize> {
    use std::sync::OnceLock;
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES
        .get_or_init(|| feature_defs().into_iter().map(|d| d.name).collect())
        .iter()
        .position(|n| n == name)
}

fn flag(b: bool) -> FeatureValue {
    FeatureValue::Num(if b { 1.0 } else { 0.0 })
}

/// Assemble the full feature vector of one admission.
pub fn assemble(
    patient: &Patient,
    admission: &Admission,
    structured: &StructuredFields,
    summary: &AdmissionDomainSummary,
    history: &HistoryFeatures,
) -> Result<AdmissionFeatures> {
    if summary.admission_id != admission.admission_id {
        return Err(Error::Invalid(format!(
            "domain summary for {} passed with admission {}",
            summary.admission_id, admission.admission_id
        )));
    }
    if !patient.admissions.is_empty() && !patient.admissions.iter().any(|a| a.admission_id == admission.admission_id) {
        return Err(Error::Invalid(format!(
            "admission {} does not belong to patient {}",
            admission.admission_id, patient.patient_id
        )));
    }
    use FeatureValue as V;
    let n_notes = admission.notes.len();
    let n_tokens: usize = admission.notes.iter().map(|n| count_tokens(&n.text)).sum();
    let ds_tokens: usize = admission
        .notes
        .iter()
        .filter(|n| n.note_type == NoteType::DischargeSummary)
        .map(|n| count_tokens(&n.text))
        .sum();
    let gaf_a = structured.gaf_admission.map(f64::from);
    let gaf_d = structured.gaf_discharge.map(f64::from);
    let est = structured.estimated_los_days.map(f64::from);
    let actual = admission.length_of_stay() as f64;
    let both = |a: Option<f64>, b: Option<f64>| a.zip(b);
    let mut values = vec![
        V::num(patient.age_at(admission.admit_date).map(f64::from)),
        V::Cat(patient.gender.label().into()),
        V::Cat(patient.race.label().into()),
        V::Cat(patient.marital_status.label().into()),
        V::Cat(patient.veteran.label().into()),
        V::num(history.history_of_suicidality.map(|b| b as u8 as f64)),
        V::Num(history.n_past_admissions as f64),
        V::num(history.avg_past_los),
        V::num(history.avg_days_between_admissions),
        V::num(history.prev_30day_readmission.map(|b| b as u8 as f64)),
        V::Num(history.n_past_readmissions as f64),
        V::num(history.readmission_ratio),
        V::num(history.avg_past_gaf_admission),
        V::num(history.avg_past_gaf_discharge),
        V::cat(history.mode_past_insight.map(|i| i.label())),
        V::cat(history.mode_past_compliance.map(|c| c.label())),
        V::Num(n_notes as f64),
        V::Num(n_tokens as f64),
        V::Num(ds_tokens as f64),
        V::Num(if n_notes == 0 { 0.0 } else { n_tokens as f64 / n_notes as f64 }),
        V::num(gaf_a),
        V::num(gaf_d),
        V::num(both(gaf_d, gaf_a).map(|(d, a)| d - a)),
        V::num(mean(structured.gaf_per_note.iter().flatten().map(|&g| f64::from(g)))),
        V::cat(structured.insight.map(|i| i.label())),
        V::cat(structured.compliance.map(|c| c.label())),
        V::num(est),
        V::Num(actual),
        V::num(est.map(|e| e - actual)),
        flag(history.is_first_admission()),
    ];
    for d in RiskDomain::ALL {
        values.push(V::Num(summary.get(d).sentence_fraction));
    }
    for d in RiskDomain::ALL {
        values.push(V::Num(summary.get(d).sentiment_score));
    }
    values.push(V::Cat(admission.suicide_risk.label().into()));
    Ok(AdmissionFeatures {
        admission_id: admission.admission_id.clone(),
        patient_id: admission.patient_id.clone(),
        label: admission.readmitted(),
        values,
    })
}

/// Ordered column names after one-hot expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<String>,
}

impl FeatureSchema {
    /// The fixed expansion of [`feature_defs`].
    pub fn standard() -> Self {
        let mut columns = Vec::new();
        for d in feature_defs() {
            match &d.kind {
                FeatureKind::Numeric { nullable } => {
                    columns.push(d.name.clone());
                    if *nullable {
                        columns.push(format!("{}{MISSING_SUFFIX}", d.name));
                    }
                }
                FeatureKind::Categorical { levels, .. } => {
                    columns.extend(levels.iter().map(|l| format!("{}={l}", d.name)));
                }
            }
        }
        FeatureSchema { columns }
    }

    pub fn from_columns(columns: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::Schema(format!("duplicate column `{c}`")));
            }
        }
        Ok(FeatureSchema { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Hex sha256 over the newline-joined column names.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// One encoded row: categoricals one-hot, numerics raw with NaN for Missing.
pub fn encode_row(features: &AdmissionFeatures) -> Vec<f64> {
    let defs = feature_defs();
    let mut row = Vec::with_capacity(FeatureSchema::standard().width());
    for (d, v) in defs.iter().zip(&features.values) {
        match &d.kind {
            FeatureKind::Numeric { nullable } => {
                let x = v.as_num().filter(|x| x.is_finite());
                row.push(x.unwrap_or(f64::NAN));
                if *nullable {
                    row.push(if x.is_none() { 1.0 } else { 0.0 });
                }
            }
            FeatureKind::Categorical { levels, fallback } => {
                let level = match v {
                    FeatureValue::Cat(s) if levels.contains(s) => s,
                    _ => fallback,
                };
                row.extend(levels.iter().map(|l| if l == level { 1.0 } else { 0.0 }));
            }
        }
    }
    row
}

/// Rows aligned to admissions. `NaN` marks a missing numeric until an
/// [`Imputer`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub admission_ids: Vec<String>,
    /// Patient of each row; used for grouped splits.
    pub groups: Vec<String>,
}

impl FeatureMatrix {
    pub fn from_features(features: &[AdmissionFeatures]) -> Self {
        FeatureMatrix {
            schema: FeatureSchema::standard(),
            rows: features.iter().map(encode_row).collect(),
            labels: features.iter().map(|f| f.label).collect(),
            admission_ids: features.iter().map(|f| f.admission_id.clone()).collect(),
            groups: features.iter().map(|f| f.patient_id.clone()).collect(),
        }
    }

    pub fn new(schema: FeatureSchema, rows: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != schema.width()) {
            return Err(Error::Dimension {
                expected: schema.width(),
                got: r.len(),
            });
        }
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("row{i}")).collect();
        Ok(FeatureMatrix {
            schema,
            rows,
            labels,
            groups: ids.clone(),
            admission_ids: ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.schema.width()
    }

    pub fn subset_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            admission_ids: idx.iter().map(|&i| self.admission_ids[i].clone()).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            schema: FeatureSchema {
                columns: cols.iter().map(|&c| self.schema.columns[c].clone()).collect(),
            },
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            labels: self.labels.clone(),
            admission_ids: self.admission_ids.clone(),
            groups: self.groups.clone(),
        }
    }

    pub fn select_named(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| self.schema.index(n).ok_or_else(|| Error::Schema(format!("no column `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&idx))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|x| x.is_finite())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.csv_string().as_bytes())
            .map_err(|e| Error::io("<csv>", e))
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.schema.columns.join(","));
        out.push_str(",label\n");
        for (r, &y) in self.rows.iter().zip(&self.labels) {
            for x in r {
                if x.is_finite() {
                    out.push_str(&format_sig6(*x));
                }
                out.push(',');
            }
            out.push(if y { '1' } else { '0' });
            out.push('\n');
        }
        out
    }

    /// `admission_id,patient_id` per row.
    pub fn ids_csv_string(&self) -> String {
        let mut out = String::from("admission_id,patient_id\n");
        for (a, p) in self.admission_ids.iter().zip(&self.groups) {
            let _ = writeln!(out, "{a},{p}");
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_string()).map_err(|e| Error::io(path, e))?;
        let ids = ids_path(path);
        std::fs::write(&ids, self.ids_csv_string()).map_err(|e| Error::io(ids, e))
    }

    /// Parse a CSV written by [`FeatureMatrix::csv_string`]. Empty cells
    /// become `NaN`.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::io("<csv>", e))?,
            None => return Err(Error::Malformed { line: 1, message: "empty feature file".into() }),
        };
        let mut cols: Vec<String> = header.trim_end().split(',').map(str::to_string).collect();
        if cols.pop().as_deref() != Some("label") {
            return Err(Error::Malformed { line: 1, message: "last column must be `label`".into() });
        }
        let schema = FeatureSchema::from_columns(cols)?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<csv>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Malformed { line: i + 1, message };
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != schema.width() + 1 {
                return Err(bad(format!("expected {} cells, got {}", schema.width() + 1, cells.len())));
            }
            let row = cells[..schema.width()]
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        c.parse::<f64>().map_err(|_| bad(format!("bad number `{c}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let y = match cells[schema.width()] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("label must be 0 or 1, got `{other}`"))),
            };
            rows.push(row);
            labels.push(y);
        }
        FeatureMatrix::new(schema, rows, labels)
    }

    /// Load a CSV and, when present, its ids sidecar.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_csv(std::io::BufReader::new(f))?;
        let ids = ids_path(path);
        if ids.exists() {
            let text = std::fs::read_to_string(&ids).map_err(|e| Error::io(&ids, e))?;
            let pairs: Vec<(String, String)> = text
                .lines()
                .skip(1)
                .filter(|l| !l.is_empty())
                .filter_map(|l| l.split_once(',').map(|(a, p)| (a.to_string(), p.to_string())))
                .collect();
            if pairs.len() != m.n_rows() {
                return Err(Error::Schema(format!(
                    "{} lists {} rows, feature file has {}",
                    ids.display(),
                    pairs.len(),
                    m.n_rows()
                )));
            }
            (m.admission_ids, m.groups) = pairs.into_iter().unzip();
        }
        Ok(m)
    }
}

pub fn ids_path(csv: &Path) -> std::path::PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".ids.csv");
    s.into()
}

/// `%.6g`-style formatting.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    // The exponent is taken after rounding, so 9.9999996 becomes 1.00000e1.
    let s = format!("{:.5e}", x);
    let (mant, e) = s.split_once('e').expect("exponent present");
    let e: i32 = e.parse().expect("integer exponent");
    if (-4..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mant.to_string());
        format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Per-column means over training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub means: Vec<f64>,
}

impl Imputer {
    /// Means of finite entries in `train` rows; 0 for a column with none.
    pub fn fit(m: &FeatureMatrix, train: &[usize]) -> Self {
        let means = (0..m.width())
            .map(|c| mean(train.iter().map(|&i| m.rows[i][c]).filter(|x| x.is_finite())).unwrap_or(0.0))
            .collect();
        Imputer { means }
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.width() != self.means.len() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                got: m.width(),
            });
        }
        let mut out = m.clone();
        for r in &mut out.rows {
            for (x, mu) in r.iter_mut().zip(&self.means) {
                if !x.is_finite() {
                    *x = *mu;
                }
            }
        }
        Ok(out)
    }
}

/// Schema, training-row imputation and the imputed matrix for `all`.
pub fn fit_schema_and_encode(
    train: &[AdmissionFeatures],
    all: &[AdmissionFeatures],
) -> Result<(FeatureSchema, Imputer, FeatureMatrix)> {
    let train_m = FeatureMatrix::from_features(train);
    let idx: Vec<usize> = (0..train.len()).collect();
    let imputer = Imputer::fit(&train_m, &idx);
    let m = imputer.apply(&FeatureMatrix::from_features(all))?;
    Ok((m.schema.clone(), imputer, m))
}
