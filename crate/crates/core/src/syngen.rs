//! Deterministic synthetic EHR generator.
//!
//! Each admission gets a latent readmission propensity
//! `logistic(b + Σ w·s + ε)` over a set of planted signals `s`. The intercept
//! `b` is solved so the mean propensity hits the target rate. Structured
//! chart values and note language are both driven by the same latent draws,
//! so extracted features carry the planted signal back out.
//!
//! Three independent random streams are used per patient (latent, text) plus
//! one for the sentiment seed set. Changing an effect weight therefore only
//! moves labels and follow-up gaps; every other draw stays put.

pub mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::corpus::{Admission, Corpus, Gender, MaritalStatus, Note, NoteType, Patient, Race, YesNoUnknown};
use crate::domains::{Polarity, RiskDomain, SentimentRecord};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::textproc::{count_tokens, Compliance, Insight};

pub use templates::{SentenceTemplate, TemplatePool};

const STREAM_LATENT: u64 = 1;
const STREAM_TEXT: u64 = 2;
const STREAM_SEED_SET: u64 = 3;

/// Share of narrative sentences that talk about a risk-factor domain.
pub const DOMAIN_SENTENCE_RATE: f64 = 0.5;
/// How strongly a frequency latent tilts the domain mix.
const FREQUENCY_TILT: f64 = 0.6;

/// Inclusive integer range with a target mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
    pub mean: f64,
}

impl CountRange {
    pub fn new(min: u32, max: u32, mean: f64) -> Self {
        CountRange { min, max, mean }
    }

    fn validate(&self, key: &str, floor: u32) -> Result<()> {
        if self.min > self.max {
            return Err(Error::config(key, format!("empty range {}..{}", self.min, self.max)));
        }
        if self.min < floor {
            return Err(Error::config(key, format!("minimum must be at least {floor}")));
        }
        if !(self.mean >= self.min as f64 && self.mean <= self.max as f64) {
            return Err(Error::config(
                format!("{key}_mean"),
                format!("{} is outside {}..{}", self.mean, self.min, self.max),
            ));
        }
        Ok(())
    }

    /// `min + Binomial(max - min, p)` with `p` chosen to hit the mean.
    pub fn sample(&self, rng: &mut Rng) -> u32 {
        let span = self.max - self.min;
        if span == 0 {
            return self.min;
        }
        let p = ((self.mean - self.min as f64) / span as f64).clamp(0.0, 1.0);
        let b = Binomial::new(span as u64, p).expect("p in [0,1]");
        self.min + b.sample(rng) as u32
    }
}

impl fmt::Display for CountRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

fn parse_range(key: &str, v: &str) -> Result<(u32, u32)> {
    let bad = || Error::config(key, format!("expected `lo..hi`, got `{v}`"));
    let (lo, hi) = v.split_once("..").ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

pub const STRUCTURED_EFFECTS: [&str; 5] = [
    "poor_insight",
    "noncompliance",
    "low_gaf_discharge",
    "past_readmission_ratio",
    "suicide_risk",
];

pub fn sentiment_effect(d: RiskDomain) -> String {
    format!("negative_{}_sentiment", d.slug())
}

pub fn frequency_effect(d: RiskDomain) -> String {
    format!("{}_frequency", d.slug())
}

/// Every accepted effect name, in a fixed order.
pub fn effect_names() -> Vec<String> {
    let mut names: Vec<String> = STRUCTURED_EFFECTS.iter().map(|s| s.to_string()).collect();
    names.extend(RiskDomain::ALL.iter().map(|&d| sentiment_effect(d)));
    names.extend(RiskDomain::ALL.iter().map(|&d| frequency_effect(d)));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub admissions_per_patient: CountRange,
    pub notes_per_admission: CountRange,
    pub tokens_per_note: CountRange,
    pub target_readmission_rate: f64,
    /// Missing names have weight zero.
    pub effect_weights: BTreeMap<String, f64>,
    pub noise_sd: f64,
    pub seed_set_size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let mut w = BTreeMap::new();
        for (k, v) in [
            ("poor_insight", 0.5),
            ("noncompliance", 0.5),
            ("low_gaf_discharge", 0.3),
            ("past_readmission_ratio", 0.8),
            ("suicide_risk", 0.3),
        ] {
            w.insert(k.to_string(), v);
        }
        for d in RiskDomain::ALL {
            w.insert(frequency_effect(d), 0.0);
            w.insert(sentiment_effect(d), 0.0);
        }
        for (d, f, s) in [
            (RiskDomain::Mood, 0.35, 0.8),
            (RiskDomain::SubstanceUse, 0.35, 0.8),
            (RiskDomain::Interpersonal, 0.25, 0.5),
            (RiskDomain::ThoughtContent, 0.25, 0.5),
        ] {
            w.insert(frequency_effect(d), f);
            w.insert(sentiment_effect(d), s);
        }
        GenConfig {
            seed: 0,
            n_patients: 183,
            admissions_per_patient: CountRange::new(2, 21, 3.02),
            notes_per_admission: CountRange::new(2, 8, 4.25),
            tokens_per_note: CountRange::new(400, 1800, 1011.0),
            target_readmission_rate: 0.5,
            effect_weights: w,
            noise_sd: 0.5,
            seed_set_size: 3500,
        }
    }
}

impl GenConfig {
    /// Defaults overlaid with `kv`. Unknown keys and effect names are errors.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let names = effect_names();
        kv.reject_unknown(|k| {
            const PLAIN: [&str; 11] = [
                "seed",
                "n_patients",
                "admissions_per_patient",
                "admissions_per_patient_mean",
                "notes_per_admission",
                "notes_per_admission_mean",
                "tokens_per_note",
                "tokens_per_note_mean",
                "target_readmission_rate",
                "noise_sd",
                "seed_set_size",
            ];
            PLAIN.contains(&k) || k.strip_prefix("effect_weights.").is_some_and(|n| names.iter().any(|m| m == n))
        })?;
        let mut c = GenConfig::default();
        kv.read_into("seed", &mut c.seed)?;
        kv.read_into("n_patients", &mut c.n_patients)?;
        kv.read_into("target_readmission_rate", &mut c.target_readmission_rate)?;
        kv.read_into("noise_sd", &mut c.noise_sd)?;
        kv.read_into("seed_set_size", &mut c.seed_set_size)?;
        for (key, slot) in [
            ("admissions_per_patient", &mut c.admissions_per_patient),
            ("notes_per_admission", &mut c.notes_per_admission),
            ("tokens_per_note", &mut c.tokens_per_note),
        ] {
            if let Some(v) = kv.get(key) {
                let (lo, hi) = parse_range(key, v)?;
                slot.min = lo;
                slot.max = hi;
                // A bare range without a mean targets its midpoint.
                slot.mean = (lo as f64 + hi as f64) / 2.0;
            }
            kv.read_into(&format!("{key}_mean"), &mut slot.mean)?;
        }
        let eff = kv.section("effect_weights.");
        for (name, _) in eff.iter() {
            let v: f64 = eff.parsed(name)?.expect("present");
            c.effect_weights.insert(name.to_string(), v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("seed", self.seed);
        kv.set("n_patients", self.n_patients);
        for (key, r) in [
            ("admissions_per_patient", &self.admissions_per_patient),
            ("notes_per_admission", &self.notes_per_admission),
            ("tokens_per_note", &self.tokens_per_note),
        ] {
            kv.set(key, r);
            kv.set(&format!("{key}_mean"), r.mean);
        }
        kv.set("target_readmission_rate", self.target_readmission_rate);
        kv.set("noise_sd", self.noise_sd);
        kv.set("seed_set_size", self.seed_set_size);
        for (k, v) in &self.effect_weights {
            kv.set(&format!("effect_weights.{k}"), v);
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::config("n_patients", "must be positive"));
        }
        self.admissions_per_patient.validate("admissions_per_patient", 1)?;
        self.notes_per_admission.validate("notes_per_admission", 2)?;
        self.tokens_per_note.validate("tokens_per_note", 1)?;
        let r = self.target_readmission_rate;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::config(
                "target_readmission_rate",
                format!("{r} is not strictly between 0 and 1"),
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd", "must be finite and non-negative"));
        }
        let names = effect_names();
        for (k, v) in &self.effect_weights {
            if !names.contains(k) {
                return Err(Error::config(format!("effect_weights.{k}"), "unknown effect"));
            }
            if !v.is_finite() {
                return Err(Error::config(format!("effect_weights.{k}"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn weight(&self, name: &str) -> f64 {
        self.effect_weights.get(name).copied().unwrap_or(0.0)
    }

    /// Same config with every effect weight set to zero.
    pub fn null_model(&self) -> Self {
        let mut c = self.clone();
        for v in c.effect_weights.values_mut() {
            *v = 0.0;
        }
        c
    }
}

impl FromStr for GenConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GenConfig::from_kv(&KvConfig::parse(s)?)
    }
}

/// Latent draws for one admission. None of these depend on effect weights.
#[derive(Debug, Clone)]
struct AdmissionLatent {
    los: i64,
    estimated_los: Option<i64>,
    suicide_risk: YesNoUnknown,
    insight_admission_note: Option<Insight>,
    insight_progress: Vec<Option<Insight>>,
    insight_discharge: Option<Insight>,
    compliance_admission_note: Option<Compliance>,
    compliance_progress: Vec<Option<Compliance>>,
    compliance_discharge: Option<Compliance>,
    gaf_admission: u8,
    gaf_discharge: u8,
    chart_gaf_admission: bool,
    chart_gaf_discharge: bool,
    progress_gaf: Vec<Option<u8>>,
    frequency: [f64; 7],
    sentiment: [f64; 7],
    noise: f64,
    u_label: f64,
    u_gap: f64,
}

impl AdmissionLatent {
    fn n_notes(&self) -> usize {
        self.progress_gaf.len() + 2
    }

    /// Insight as the chart resolves it: latest note stating it.
    fn resolved_insight(&self) -> Option<Insight> {
        self.insight_discharge
            .or_else(|| self.insight_progress.iter().rev().flatten().next().copied())
            .or(self.insight_admission_note)
    }

    fn resolved_compliance(&self) -> Option<Compliance> {
        self.compliance_discharge
            .or_else(|| self.compliance_progress.iter().rev().flatten().next().copied())
            .or(self.compliance_admission_note)
    }
}

#[derive(Debug, Clone)]
struct PatientLatent {
    gender: Gender,
    race: Race,
    marital_status: MaritalStatus,
    veteran: YesNoUnknown,
    first_admit: NaiveDate,
    age_days: i64,
    admissions: Vec<AdmissionLatent>,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn pick<T: Copy>(rng: &mut Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(v, w) in items {
        if u < w {
            return v;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

fn insight_level(x: f64) -> Insight {
    if x < -0.45 {
        Insight::Poor
    } else if x < 0.45 {
        Insight::Fair
    } else {
        Insight::Good
    }
}

fn compliance_level(x: f64) -> Compliance {
    if x < -0.6 {
        Compliance::None
    } else if x < 0.3 {
        Compliance::Partial
    } else {
        Compliance::Yes
    }
}

fn worse_insight(i: Insight) -> Insight {
    match i {
        Insight::Good => Insight::Fair,
        _ => Insight::Poor,
    }
}

fn worse_compliance(c: Compliance) -> Compliance {
    match c {
        Compliance::Yes => Compliance::Partial,
        _ => Compliance::None,
    }
}

fn gaf(x: f64) -> u8 {
    x.round().clamp(1.0, 100.0) as u8
}

fn draw_patient(config: &GenConfig, index: usize) -> PatientLatent {
    let mut rng = seed::rng(seed::derive_path(config.seed, &[STREAM_LATENT, index as u64]));
    let r = &mut rng;
    let gender = pick(
        r,
        &[(Gender::Male, 0.55), (Gender::Female, 0.43), (Gender::Other, 0.01), (Gender::Unknown, 0.01)],
    );
    let race = pick(
        r,
        &[
            (Race::White, 0.70),
            (Race::Black, 0.12),
            (Race::Asian, 0.05),
            (Race::Hispanic, 0.07),
            (Race::Other, 0.03),
            (Race::Unknown, 0.03),
        ],
    );
    let marital_status = pick(
        r,
        &[
            (MaritalStatus::Single, 0.65),
            (MaritalStatus::Married, 0.15),
            (MaritalStatus::Other, 0.15),
            (MaritalStatus::Unknown, 0.05),
        ],
    );
    let veteran = pick(r, &[(YesNoUnknown::Yes, 0.06), (YesNoUnknown::No, 0.90), (YesNoUnknown::Unknown, 0.04)]);
    let age_years = (20.0_f64 + Gamma::new(2.0, 8.0).expect("valid gamma").sample(r)).min(67.0);
    let age_days = (age_years * 365.25) as i64;
    let base = NaiveDate::from_ymd_opt(2012, 1, 1).expect("valid date");
    let first_admit = base + Duration::days(r.random_range(0..1461));
    let insight_trait = normal(r);
    let compliance_trait = normal(r);
    let sentiment_trait: [f64; 7] = std::array::from_fn(|_| normal(r));

    let n_adm = config.admissions_per_patient.sample(r) as usize;
    let los_dist: Gamma<f64> = Gamma::new(2.0, 6.0).expect("valid gamma");
    let admissions = (0..n_adm)
        .map(|_| {
            let n_notes = config.notes_per_admission.sample(r) as usize;
            let los = (1.0_f64 + los_dist.sample(r)).round().clamp(1.0, 120.0) as i64;
            let est_noise = (4.0 * normal(r)).round() as i64;
            let estimated_los = (r.random::<f64>() < 0.85).then_some((los + est_noise).max(1));
            let suicide_risk = pick(
                r,
                &[(YesNoUnknown::Yes, 0.30), (YesNoUnknown::No, 0.62), (YesNoUnknown::Unknown, 0.08)],
            );

            let insight = insight_level(0.7 * insight_trait + 0.7 * normal(r));
            let compliance = compliance_level(0.7 * compliance_trait + 0.7 * normal(r));
            let initial_insight = if r.random::<f64>() < 0.4 { worse_insight(insight) } else { insight };
            let initial_compliance =
                if r.random::<f64>() < 0.4 { worse_compliance(compliance) } else { compliance };
            let insight_admission_note = (r.random::<f64>() < 0.5).then_some(initial_insight);
            let compliance_admission_note = (r.random::<f64>() < 0.5).then_some(initial_compliance);
            let n_progress = n_notes - 2;
            let insight_progress = (0..n_progress).map(|_| (r.random::<f64>() < 0.2).then_some(insight)).collect();
            let compliance_progress =
                (0..n_progress).map(|_| (r.random::<f64>() < 0.2).then_some(compliance)).collect();
            let insight_discharge = (r.random::<f64>() < 0.9).then_some(insight);
            let compliance_discharge = (r.random::<f64>() < 0.9).then_some(compliance);

            let gaf_adm = 38.0 + 9.0 * normal(r);
            let gaf_dis = gaf_adm + 12.0 + 7.0 * normal(r);
            let chart_gaf_admission = r.random::<f64>() < 0.9;
            let chart_gaf_discharge = r.random::<f64>() < 0.9;
            let progress_gaf = (0..n_progress)
                .map(|k| {
                    let t = (k + 1) as f64 / (n_progress + 1) as f64;
                    let v = gaf(gaf_adm + t * (gaf_dis - gaf_adm) + 3.0 * normal(r));
                    (r.random::<f64>() < 0.85).then_some(v)
                })
                .collect();
            let frequency = std::array::from_fn(|_| normal(r));
            let sentiment = std::array::from_fn(|d| 0.5 * sentiment_trait[d] + 0.85 * normal(r));
            AdmissionLatent {
                los,
                estimated_los,
                suicide_risk,
                insight_admission_note,
                insight_progress,
                insight_discharge,
                compliance_admission_note,
                compliance_progress,
                compliance_discharge,
                gaf_admission: gaf(gaf_adm),
                gaf_discharge: gaf(gaf_dis),
                chart_gaf_admission,
                chart_gaf_discharge,
                progress_gaf,
                frequency,
                sentiment,
                noise: config.noise_sd * normal(r),
                u_label: r.random(),
                u_gap: r.random(),
            }
        })
        .collect();
    PatientLatent {
        gender,
        race,
        marital_status,
        veteran,
        first_admit,
        age_days,
        admissions,
    }
}

/// Planted signals of one admission, keyed by effect name.
fn signals(a: &AdmissionLatent, past_ratio: f64) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    s.insert("poor_insight".into(), f64::from(a.resolved_insight() == Some(Insight::Poor)));
    let nc = match a.resolved_compliance() {
        Some(Compliance::None) => 1.0,
        Some(Compliance::Partial) => 0.5,
        _ => 0.0,
    };
    s.insert("noncompliance".into(), nc);
    s.insert("low_gaf_discharge".into(), (50.0 - a.gaf_discharge as f64) / 10.0);
    s.insert("past_readmission_ratio".into(), past_ratio);
    s.insert("suicide_risk".into(), f64::from(a.suicide_risk == YesNoUnknown::Yes));
    for d in RiskDomain::ALL {
        s.insert(sentiment_effect(d), -a.sentiment[d.index()]);
        s.insert(frequency_effect(d), a.frequency[d.index()]);
    }
    s
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Outcome {
    propensity: f64,
    label: bool,
    signals: BTreeMap<String, f64>,
}

fn simulate(weights: &[(String, f64)], latents: &[PatientLatent], b: f64) -> Vec<Vec<Outcome>> {
    latents
        .iter()
        .map(|p| {
            let mut n_readmit = 0usize;
            p.admissions
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    let ratio = if j == 0 { 0.0 } else { n_readmit as f64 / j as f64 };
                    let s = signals(a, ratio);
                    let eta: f64 = weights.iter().map(|(k, w)| w * s[k]).sum::<f64>() + a.noise;
                    let propensity = logistic(b + eta);
                    let label = a.u_label < propensity;
                    n_readmit += label as usize;
                    Outcome {
                        propensity,
                        label,
                        signals: s,
                    }
                })
                .collect()
        })
        .collect()
}

fn mean_propensity(out: &[Vec<Outcome>]) -> f64 {
    let (sum, n) = out
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), o| (s + o.propensity, n + 1));
    sum / n as f64
}

/// Intercept making the mean propensity equal the target rate.
fn solve_intercept(config: &GenConfig, weights: &[(String, f64)], latents: &[PatientLatent]) -> Result<f64> {
    let target = config.target_readmission_rate;
    let (mut lo, mut hi) = (-30.0, 30.0);
    let at = |b: f64| mean_propensity(&simulate(weights, latents, b));
    if at(lo) > target || at(hi) < target {
        return Err(Error::config(
            "target_readmission_rate",
            format!("{target} is unreachable with the given effect weights"),
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Planted values for one admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionTruth {
    pub admission_id: String,
    pub patient_id: String,
    pub propensity: f64,
    pub label: bool,
    pub signals: BTreeMap<String, f64>,
    pub insight: Option<Insight>,
    pub compliance: Option<Compliance>,
    pub gaf_admission: u8,
    pub gaf_discharge: u8,
    /// Domain-bearing narrative sentences, indexed like [`RiskDomain::ALL`].
    pub domain_sentences: [usize; 7],
    /// All sentence units of the admission's notes, header blocks included.
    pub total_sentences: usize,
}

impl AdmissionTruth {
    pub fn planted_fraction(&self, d: RiskDomain) -> f64 {
        if self.total_sentences == 0 {
            return 0.0;
        }
        self.domain_sentences[d.index()] as f64 / self.total_sentences as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intercept: f64,
    pub admissions: Vec<AdmissionTruth>,
}

impl GroundTruth {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.admissions {
            out.push_str(&serde_json::to_string(a).expect("truth serializes"));
            out.push('\n');
        }
        out
    }

    pub fn get(&self, admission_id: &str) -> Option<&AdmissionTruth> {
        self.admissions.iter().find(|a| a.admission_id == admission_id)
    }
}

struct TextOut {
    notes: Vec<Note>,
    domain_sentences: [usize; 7],
    total_sentences: usize,
}

fn header_block(lines: &[String]) -> String {
    lines.join("\n")
}

fn narrative(
    rng: &mut Rng,
    pool: &TemplatePool,
    latent: &AdmissionLatent,
    budget: usize,
    counts: &mut [usize; 7],
) -> (String, usize) {
    let weights: Vec<(RiskDomain, f64)> = RiskDomain::ALL
        .iter()
        .map(|&d| (d, (FREQUENCY_TILT * latent.frequency[d.index()]).exp()))
        .collect();
    let mut text = String::new();
    let mut tokens = 0;
    let mut n = 0;
    while n == 0 || tokens < budget {
        let is_domain = rng.random::<f64>() < DOMAIN_SENTENCE_RATE;
        let sentence = if is_domain {
            let d = pick(rng, &weights);
            let q = latent.sentiment[d.index()];
            let p_pos = logistic(1.5 * q - 0.5);
            let p_neg = logistic(-1.5 * q - 0.5);
            let pol = pick(
                rng,
                &[
                    (Polarity::Positive, p_pos),
                    (Polarity::Neutral, 1.0 - p_pos - p_neg),
                    (Polarity::Negative, p_neg),
                ],
            );
            let ts = pool.get(d, pol);
            let t = &ts[rng.random_range(0..ts.len())];
            let subject = templates::SUBJECTS[rng.random_range(0..templates::SUBJECTS.len())];
            counts[d.index()] += 1;
            t.render(subject)
        } else {
            pool.fillers[rng.random_range(0..pool.fillers.len())].render("")
        };
        tokens += count_tokens(&sentence);
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&sentence);
        n += 1;
    }
    (text, n)
}

fn admission_text(
    config: &GenConfig,
    rng: &mut Rng,
    pool: &TemplatePool,
    admission_id: &str,
    admit: NaiveDate,
    discharge: NaiveDate,
    a: &AdmissionLatent,
) -> TextOut {
    let n_notes = a.n_notes();
    let mut counts = [0usize; 7];
    let mut total = 0;
    let mut notes = Vec::with_capacity(n_notes);
    let at = |d: NaiveDate, h: u32, m: u32| d.and_time(NaiveTime::from_hms_opt(h, m, 0).expect("valid time"));
    for k in 0..n_notes {
        let mut header = Vec::new();
        let (note_type, stamp) = if k == 0 {
            if a.chart_gaf_admission {
                header.push(format!("GAF at admission: {}", a.gaf_admission));
            }
            if let Some(e) = a.estimated_los {
                header.push(format!("Estimated LOS: {e} days"));
            }
            if let Some(i) = a.insight_admission_note {
                header.push(format!("Insight: {}", i.label()));
            }
            if let Some(c) = a.compliance_admission_note {
                header.push(format!("Compliance: {}", c.label()));
            }
            (NoteType::Admission, at(admit, 8, 0))
        } else if k + 1 == n_notes {
            if a.chart_gaf_discharge {
                header.push(format!("GAF at discharge: {}", a.gaf_discharge));
                header.push(format!("GAF: {}", a.gaf_discharge));
            }
            if let Some(i) = a.insight_discharge {
                header.push(format!("Insight: {}", i.label()));
            }
            if let Some(c) = a.compliance_discharge {
                header.push(format!("Compliance: {}", c.label()));
            }
            (NoteType::DischargeSummary, at(discharge, 20, 0))
        } else {
            let j = k - 1;
            if let Some(g) = a.progress_gaf[j] {
                header.push(format!("GAF: {g}"));
            }
            if let Some(i) = a.insight_progress[j] {
                header.push(format!("Insight: {}", i.label()));
            }
            if let Some(c) = a.compliance_progress[j] {
                header.push(format!("Compliance: {}", c.label()));
            }
            let day = (k as i64 * a.los) / n_notes as i64;
            (NoteType::Progress, at(admit + Duration::days(day), 12, k as u32))
        };
        let head = header_block(&header);
        let budget = (config.tokens_per_note.sample(rng) as usize).saturating_sub(count_tokens(&head));
        let (body, n_sent) = narrative(rng, pool, a, budget, &mut counts);
        total += n_sent;
        let text = if head.is_empty() {
            body
        } else {
            total += 1;
            format!("{head}\n\n{body}")
        };
        notes.push(Note {
            note_id: format!("{admission_id}-N{:02}", k + 1),
            note_type,
            timestamp: stamp,
            text,
        });
    }
    TextOut {
        notes,
        domain_sentences: counts,
        total_sentences: total,
    }
}

fn patient_id(i: usize) -> String {
    format!("P{:04}", i + 1)
}

/// Generate a corpus together with its ground truth.
pub fn generate_with_truth(config: &GenConfig, workers: usize) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let latents = seed::par_map(workers, config.n_patients, |i| draw_patient(config, i));
    let weights: Vec<(String, f64)> = effect_names()
        .into_iter()
        .map(|n| {
            let w = config.weight(&n);
            (n, w)
        })
        .filter(|(_, w)| *w != 0.0)
        .collect();
    let b = solve_intercept(config, &weights, &latents)?;
    let outcomes = simulate(&weights, &latents, b);
    let pool = TemplatePool::default();

    let built = seed::par_map(workers, config.n_patients, |i| {
        let p = &latents[i];
        let out = &outcomes[i];
        let pid = patient_id(i);
        let mut rng = seed::rng(seed::derive_path(config.seed, &[STREAM_TEXT, i as u64]));
        let mut admit = p.first_admit;
        let mut admissions = Vec::with_capacity(p.admissions.len());
        let mut truths = Vec::with_capacity(p.admissions.len());
        for (j, (a, o)) in p.admissions.iter().zip(out).enumerate() {
            let aid = format!("{pid}-A{:02}", j + 1);
            let discharge = admit + Duration::days(a.los);
            let t = admission_text(config, &mut rng, &pool, &aid, admit, discharge, a);
            truths.push(AdmissionTruth {
                admission_id: aid.clone(),
                patient_id: pid.clone(),
                propensity: o.propensity,
                label: o.label,
                signals: o.signals.clone(),
                insight: a.resolved_insight(),
                compliance: a.resolved_compliance(),
                gaf_admission: a.gaf_admission,
                gaf_discharge: a.gaf_discharge,
                domain_sentences: t.domain_sentences,
                total_sentences: t.total_sentences,
            });
            admissions.push(Admission {
                admission_id: aid,
                patient_id: pid.clone(),
                admit_date: admit,
                discharge_date: discharge,
                suicide_risk: a.suicide_risk,
                notes: t.notes,
                label_readmitted_30d: Some(o.label),
            });
            let gap = if o.label {
                1 + (a.u_gap * 30.0) as i64
            } else {
                31 + (a.u_gap * 300.0) as i64
            };
            admit = discharge + Duration::days(gap);
        }
        let patient = Patient {
            patient_id: pid,
            gender: p.gender,
            race: p.race,
            marital_status: p.marital_status,
            veteran: p.veteran,
            birth_date: p.first_admit - Duration::days(p.age_days),
            admissions,
        };
        (patient, truths)
    });

    let mut patients = Vec::with_capacity(built.len());
    let mut truth = Vec::new();
    for (p, t) in built {
        patients.push(p);
        truth.extend(t);
    }
    let corpus = Corpus { patients };
    corpus.validate()?;
    Ok((
        corpus,
        GroundTruth {
            intercept: b,
            admissions: truth,
        },
    ))
}

pub fn generate(config: &GenConfig) -> Result<Corpus> {
    generate_with_truth(config, 1).map(|(c, _)| c)
}

/// Ground truth for a corpus produced by [`generate`] with `config`.
pub fn ground_truth(config: &GenConfig, corpus: &Corpus) -> Result<GroundTruth> {
    let (regen, truth) = generate_with_truth(config, 1)?;
    if regen.patients.len() != corpus.patients.len() {
        return Err(Error::Invalid(format!(
            "corpus has {} patients, config generates {}",
            corpus.patients.len(),
            regen.patients.len()
        )));
    }
    for (a, b) in regen.patients.iter().zip(&corpus.patients) {
        if a != b {
            return Err(Error::Invalid(format!(
                "patient {} does not match the corpus generated by this config",
                b.patient_id
            )));
        }
    }
    Ok(truth)
}

/// Labeled sentiment sentences drawn from the template pool, cycling
/// through every domain and polarity.
pub fn sentiment_seed_set(config: &GenConfig) -> Vec<SentimentRecord> {
    let pool = TemplatePool::default();
    let mut rng = seed::rng(seed::derive(config.seed, STREAM_SEED_SET));
    (0..config.seed_set_size)
        .map(|k| {
            let d = RiskDomain::ALL[k % 7];
            let p = Polarity::ALL[(k / 7) % 3];
            let ts = pool.get(d, p);
            let t = &ts[rng.random_range(0..ts.len())];
            let subject = templates::SUBJECTS[rng.random_range(0..templates::SUBJECTS.len())];
            SentimentRecord {
                domain: d,
                text: t.render(subject),
                label: p,
            }
        })
        .collect()
}
