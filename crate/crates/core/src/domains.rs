//! Topic extraction and clinical sentiment: lexicon weak labeling, the
//! multi-label topic MLP, one sentiment MLP per risk domain and
//! admission-level aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Admission, Corpus};
use crate::error::{Error, Result};
use crate::neural::{self, AsInput, MLPModel, MLPSpec, OutputKind, SentenceEncoder, SentenceVector, TrainConfig};
use crate::textproc::{self, TokenizedSentence};

const DEFAULT_LEXICON: &str = include_str!("../resources/lexicon.json");

/// Per-domain decision threshold of the topic model.
pub const TOPIC_THRESHOLD: f64 = 0.5;

/// Minimum labeled sentences per domain for sentiment training.
pub const MIN_SENTIMENT_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskDomain {
    Appearance,
    ThoughtProcess,
    ThoughtContent,
    Interpersonal,
    SubstanceUse,
    Occupation,
    Mood,
}

impl RiskDomain {
    pub const ALL: [RiskDomain; 7] = [
        RiskDomain::Appearance,
        RiskDomain::ThoughtProcess,
        RiskDomain::ThoughtContent,
        RiskDomain::Interpersonal,
        RiskDomain::SubstanceUse,
        RiskDomain::Occupation,
        RiskDomain::Mood,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskDomain::Appearance => "appearance",
            RiskDomain::ThoughtProcess => "thought_process",
            RiskDomain::ThoughtContent => "thought_content",
            RiskDomain::Interpersonal => "interpersonal",
            RiskDomain::SubstanceUse => "substance_use",
            RiskDomain::Occupation => "occupation",
            RiskDomain::Mood => "mood",
        }
    }

    /// Short form used in planted-effect names (`negative_substance_sentiment`).
    pub fn slug(self) -> &'static str {
        match self {
            RiskDomain::SubstanceUse => "substance",
            other => other.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        RiskDomain::ALL.into_iter().find(|d| d.name() == s || d.slug() == s)
    }
}

impl std::fmt::Display for RiskDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

/// Domain keyword and multiword-expression patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    patterns: BTreeMap<RiskDomain, Vec<Vec<String>>>,
    /// First token -> (domain, pattern index).
    by_first: HashMap<String, Vec<(RiskDomain, usize)>>,
}

impl Lexicon {
    pub fn new(patterns: BTreeMap<RiskDomain, Vec<Vec<String>>>) -> Result<Self> {
        let mut by_first: HashMap<String, Vec<(RiskDomain, usize)>> = HashMap::new();
        for (&domain, pats) in &patterns {
            let mut seen = HashSet::new();
            for (i, p) in pats.iter().enumerate() {
                if p.is_empty() {
                    return Err(Error::Invalid(format!("lexicon: empty pattern in {domain}")));
                }
                if !seen.insert(p) {
                    return Err(Error::Invalid(format!(
                        "lexicon: duplicate pattern `{}` in {domain}",
                        p.join(" ")
                    )));
                }
                by_first.entry(p[0].clone()).or_default().push((domain, i));
            }
        }
        Ok(Lexicon { patterns, by_first })
    }

    /// JSON map from domain name to arrays of space-separated patterns.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("lexicon: {e}")))?;
        let mut patterns = BTreeMap::new();
        for (name, pats) in raw {
            let domain = RiskDomain::parse(&name)
                .ok_or_else(|| Error::Invalid(format!("lexicon: unknown domain `{name}`")))?;
            let parsed: Vec<Vec<String>> = pats.iter().map(|p| textproc::tokenize(p)).collect();
            patterns.insert(domain, parsed);
        }
        Lexicon::new(patterns)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, Vec<String>> = self
            .patterns
            .iter()
            .map(|(d, ps)| (d.name(), ps.iter().map(|p| p.join(" ")).collect()))
            .collect();
        serde_json::to_string_pretty(&raw).expect("lexicon serializes")
    }

    pub fn patterns(&self, domain: RiskDomain) -> &[Vec<String>] {
        self.patterns.get(&domain).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Domains with at least one pattern occurring as a contiguous token run.
    pub fn match_domains(&self, tokens: &[String]) -> DomainSet {
        let mut set = DomainSet::default();
        for (start, tok) in tokens.iter().enumerate() {
            let Some(cands) = self.by_first.get(tok) else { continue };
            for &(domain, i) in cands {
                let p = &self.patterns[&domain][i];
                if tokens[start..].starts_with(p) {
                    set.insert(domain);
                }
            }
        }
        set
    }

    /// Whether any pattern of any domain occurs.
    pub fn matches_any(&self, tokens: &[String]) -> bool {
        !self.match_domains(tokens).is_empty()
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_json(DEFAULT_LEXICON).expect("shipped lexicon is valid")
    }
}

/// Match with the given lexicon.
pub fn match_domains(sentence: &TokenizedSentence, lexicon: &Lexicon) -> DomainSet {
    lexicon.match_domains(&sentence.tokens)
}

/// Subset of the seven domains, as a bit set in [`RiskDomain::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DomainSet(u8);

impl DomainSet {
    pub fn insert(&mut self, d: RiskDomain) {
        self.0 |= 1 << d.index();
    }

    pub fn contains(self, d: RiskDomain) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = RiskDomain> {
        RiskDomain::ALL.into_iter().filter(move |&d| self.contains(d))
    }

    pub fn to_multi_hot(self) -> Vec<f64> {
        RiskDomain::ALL
            .iter()
            .map(|&d| if self.contains(d) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn from_scores(scores: &[f64], threshold: f64) -> Self {
        let mut set = DomainSet::default();
        for d in RiskDomain::ALL {
            if scores[d.index()] > threshold {
                set.insert(d);
            }
        }
        set
    }
}

impl FromIterator<RiskDomain> for DomainSet {
    fn from_iter<I: IntoIterator<Item = RiskDomain>>(iter: I) -> Self {
        let mut s = DomainSet::default();
        iter.into_iter().for_each(|d| s.insert(d));
        s
    }
}

/// A sentence with its tagged domains and per-domain sentiment
/// distributions `(p_pos, p_neutral, p_neg)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSentence {
    pub sentence: TokenizedSentence,
    pub domains: DomainSet,
    pub sentiment: BTreeMap<RiskDomain, [f64; 3]>,
}

pub type WeakLabeled = Vec<(SentenceVector, Vec<f64>)>;

/// Every sentence of every note, encoded, with its lexicon multi-hot target.
/// Sentences without matches are kept as all-zero negatives.
pub fn weak_label(corpus: &Corpus, lexicon: &Lexicon, encoder: &dyn SentenceEncoder) -> WeakLabeled {
    corpus
        .admissions()
        .flat_map(|(_, a)| a.notes.iter())
        .flat_map(|n| textproc::split_sentences(&n.text))
        .map(|s| (encoder.encode(&s.tokens), lexicon.match_domains(&s.tokens).to_multi_hot()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModelConfig {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub train: TrainConfig,
}

impl Default for TopicModelConfig {
    fn default() -> Self {
        TopicModelConfig {
            hidden_sizes: vec![256, 64],
            dropout_rate: 0.0,
            train: TrainConfig {
                learning_rate: 0.1,
                epochs: 15,
                patience: 5,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentModelConfig {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub train: TrainConfig,
}

impl Default for SentimentModelConfig {
    fn default() -> Self {
        SentimentModelConfig {
            hidden_sizes: vec![256, 64],
            dropout_rate: 0.75,
            train: TrainConfig {
                learning_rate: 0.05,
                epochs: 60,
                patience: 20,
                ..TrainConfig::default()
            },
        }
    }
}

/// Multi-label sigmoid MLP over the seven domains.
pub fn train_topic_model(data: &[(SentenceVector, Vec<f64>)], config: &TopicModelConfig) -> Result<MLPModel> {
    let first = data.first().ok_or_else(|| Error::Fit("empty weak-labeled dataset".into()))?;
    let spec = MLPSpec::new(first.0.dim(), config.hidden_sizes.clone(), OutputKind::Sigmoid, RiskDomain::ALL.len())
        .with_dropout(config.dropout_rate);
    neural::train_mlp(&spec, data, &config.train)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentRecord {
    pub domain: RiskDomain,
    pub text: String,
    pub label: Polarity,
}

pub fn load_sentiment_seed(path: &Path) -> Result<Vec<SentimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_sentiment_seed(records: &[SentimentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub type SentimentModels = BTreeMap<RiskDomain, MLPModel>;

fn check_seed_coverage(records: &[SentimentRecord]) -> Result<()> {
    for d in RiskDomain::ALL {
        let mine: Vec<_> = records.iter().filter(|r| r.domain == d).collect();
        if mine.len() < MIN_SENTIMENT_SAMPLES {
            return Err(Error::config(
                d.name(),
                format!(
                    "sentiment seed has {} sentences for domain {d}, need at least {MIN_SENTIMENT_SAMPLES}",
                    mine.len()
                ),
            ));
        }
        for p in Polarity::ALL {
            if !mine.iter().any(|r| r.label == p) {
                return Err(Error::config(
                    d.name(),
                    format!("sentiment seed for domain {d} has no {} sentences", p.as_str()),
                ));
            }
        }
    }
    Ok(())
}

/// Seven independent three-way softmax models, each trained only on its
/// domain's sentences. Model `d` uses seed `derive(train.seed, d)`.
pub fn train_sentiment_models(
    records: &[SentimentRecord],
    encoder: &dyn SentenceEncoder,
    config: &SentimentModelConfig,
    workers: usize,
) -> Result<SentimentModels> {
    check_seed_coverage(records)?;
    let spec = MLPSpec::new(encoder.dim(), config.hidden_sizes.clone(), OutputKind::Softmax, 3)
        .with_dropout(config.dropout_rate);
    let models = crate::seed::try_par_map(workers, RiskDomain::ALL.len(), |i| {
        let d = RiskDomain::ALL[i];
        let data: Vec<(SentenceVector, Vec<f64>)> = records
            .iter()
            .filter(|r| r.domain == d)
            .map(|r| {
                let mut t = vec![0.0; 3];
                t[r.label.index()] = 1.0;
                (encoder.encode(&textproc::tokenize(&r.text)), t)
            })
            .collect();
        let train = TrainConfig {
            seed: crate::seed::derive(config.train.seed, i as u64),
            ..config.train.clone()
        };
        neural::train_mlp(&spec, &data, &train).map(|m| (d, m))
    })?;
    Ok(models.into_iter().collect())
}

/// `p_pos - p_neg`, rejecting inputs that are not a distribution.
pub fn scalar_sentiment(dist: [f64; 3]) -> Result<f64> {
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("not a probability distribution: {dist:?}")));
    }
    Ok(dist[0] - dist[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggingMode {
    /// Trained topic model, threshold 0.5.
    Model,
    /// Lexicon matches directly.
    Lexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Sentence scores averaged within each note, then across notes.
    TwoStage,
    /// All tagged sentences of the admission pooled.
    Pooled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub sentence_fraction: f64,
    pub sentiment_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDomainSummary {
    pub admission_id: String,
    pub total_sentences: usize,
    pub domain_sentences: [usize; 7],
    pub domains: [DomainSummary; 7],
}

impl AdmissionDomainSummary {
    pub fn get(&self, d: RiskDomain) -> DomainSummary {
        self.domains[d.index()]
    }
}

/// The trained sentence-level pipeline.
pub struct NlpModels<'a> {
    pub encoder: &'a dyn SentenceEncoder,
    pub lexicon: &'a Lexicon,
    pub topic: Option<&'a MLPModel>,
    pub sentiment: &'a SentimentModels,
    pub tagging: TaggingMode,
    pub averaging: Averaging,
}

impl NlpModels<'_> {
    pub fn tag(&self, sentence: TokenizedSentence) -> Result<TaggedSentence> {
        let domains = match (self.tagging, self.topic) {
            (TaggingMode::Lexicon, _) => self.lexicon.match_domains(&sentence.tokens),
            (TaggingMode::Model, Some(topic)) => {
                let v = self.encoder.encode(&sentence.tokens);
                DomainSet::from_scores(&topic.predict(&v)?, TOPIC_THRESHOLD)
            }
            (TaggingMode::Model, None) => {
                return Err(Error::config("tagging", "model tagging requested without a topic model"))
            }
        };
        let mut sentiment = BTreeMap::new();
        if !domains.is_empty() {
            let v = self.encoder.encode(&sentence.tokens);
            for d in domains.iter() {
                let model = self
                    .sentiment
                    .get(&d)
                    .ok_or_else(|| Error::config(d.name(), "no sentiment model for domain"))?;
                let p = model.predict(&v)?;
                sentiment.insert(d, [p[0], p[1], p[2]]);
            }
        }
        Ok(TaggedSentence {
            sentence,
            domains,
            sentiment,
        })
    }

    /// Admission-level sentence fractions and sentiment scores.
    pub fn summarize_admission(&self, admission: &Admission) -> Result<AdmissionDomainSummary> {
        let mut total = 0usize;
        let mut counts = [0usize; 7];
        // Per note: (sum of scores, count) per domain.
        let mut per_note: Vec<[(f64, usize); 7]> = Vec::with_capacity(admission.notes.len());
        for note in &admission.notes {
            let mut acc = [(0.0, 0usize); 7];
            for s in textproc::split_sentences(&note.text) {
                total += 1;
                let tagged = self.tag(s)?;
                for (d, dist) in &tagged.sentiment {
                    let i = d.index();
                    counts[i] += 1;
                    acc[i].0 += scalar_sentiment(*dist)?;
                    acc[i].1 += 1;
                }
            }
            per_note.push(acc);
        }
        let mut summary = AdmissionDomainSummary {
            admission_id: admission.admission_id.clone(),
            total_sentences: total,
            domain_sentences: counts,
            ..AdmissionDomainSummary::default()
        };
        for d in RiskDomain::ALL {
            let i = d.index();
            let fraction = if total == 0 { 0.0 } else { counts[i] as f64 / total as f64 };
            let score = match self.averaging {
                Averaging::TwoStage => {
                    let notes: Vec<f64> = per_note
                        .iter()
                        .filter(|acc| acc[i].1 > 0)
                        .map(|acc| acc[i].0 / acc[i].1 as f64)
                        .collect();
                    mean_or_zero(&notes)
                }
                Averaging::Pooled => {
                    let (s, n) = per_note
                        .iter()
                        .fold((0.0, 0usize), |(s, n), acc| (s + acc[i].0, n + acc[i].1));
                    if n == 0 {
                        0.0
                    } else {
                        s / n as f64
                    }
                }
            };
            summary.domains[i] = DomainSummary {
                sentence_fraction: fraction,
                sentiment_score: score.clamp(-1.0, 1.0),
            };
        }
        Ok(summary)
    }
}

fn mean_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Micro-averaged F1 of thresholded multi-label predictions.
pub fn micro_f1<X: AsInput>(model: &MLPModel, data: &[(X, Vec<f64>)]) -> Result<f64> {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (x, t) in data {
        let p = model.predict(x)?;
        for (pi, ti) in p.iter().zip(t) {
            match (*pi > TOPIC_THRESHOLD, *ti > 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                _ => {}
            }
        }
    }
    let denom = 2 * tp + fp + fne;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Fraction of argmax predictions agreeing with the labels.
pub fn sentiment_accuracy(model: &MLPModel, records: &[SentimentRecord], encoder: &dyn SentenceEncoder) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for r in records {
        let p = model.predict(&encoder.encode(&textproc::tokenize(&r.text)))?;
        let best = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        correct += usize::from(best == r.label.index());
    }
    Ok(correct as f64 / records.len() as f64)
}
