//! End-to-end glue: NLP model training, model persistence and per-admission
//! feature extraction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::corpus::{derive_labels, Corpus};
use crate::domains::{
    self, Averaging, Lexicon, NlpModels, RiskDomain, SentimentModelConfig, SentimentModels, SentimentRecord,
    TaggingMode, TopicModelConfig,
};
use crate::error::{Error, Result};
use crate::features::{self, AdmissionFeatures, FeatureMatrix};
use crate::neural::{self, HashingEncoder, MLPModel, SentenceEncoder, SentenceVector, TrainConfig, DEFAULT_DIM};
use crate::seed;
use crate::textproc::{self, resolve_admission};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpConfig {
    pub seed: u64,
    pub dim: usize,
    /// Weak-labeled sentences used to fit the topic model.
    pub max_train_sentences: usize,
    /// Weak-labeled sentences held out for micro-F1.
    pub heldout_sentences: usize,
    /// Share of sentiment seed records held out for accuracy.
    pub sentiment_heldout_fraction: f64,
    pub topic: TopicModelConfig,
    pub sentiment: SentimentModelConfig,
}

impl Default for NlpConfig {
    fn default() -> Self {
        NlpConfig {
            seed: 0,
            dim: DEFAULT_DIM,
            max_train_sentences: 8000,
            heldout_sentences: 2000,
            sentiment_heldout_fraction: 0.2,
            topic: TopicModelConfig::default(),
            sentiment: SentimentModelConfig::default(),
        }
    }
}

fn read_train(kv: &KvConfig, hidden: &mut Vec<usize>, dropout: &mut f64, t: &mut TrainConfig) -> Result<()> {
    if let Some(v) = kv.get("hidden_sizes") {
        *hidden = v
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("hidden_sizes", "expected comma-separated layer widths"))?;
    }
    kv.read_into("dropout_rate", dropout)?;
    kv.read_into("learning_rate", &mut t.learning_rate)?;
    kv.read_into("batch_size", &mut t.batch_size)?;
    kv.read_into("epochs", &mut t.epochs)?;
    kv.read_into("weight_decay", &mut t.weight_decay)?;
    kv.read_into("patience", &mut t.patience)?;
    Ok(())
}

fn write_train(kv: &mut KvConfig, prefix: &str, hidden: &[usize], dropout: f64, t: &TrainConfig) {
    let hs: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
    kv.set(&format!("{prefix}hidden_sizes"), hs.join(","));
    kv.set(&format!("{prefix}dropout_rate"), dropout);
    kv.set(&format!("{prefix}learning_rate"), t.learning_rate);
    kv.set(&format!("{prefix}batch_size"), t.batch_size);
    kv.set(&format!("{prefix}epochs"), t.epochs);
    kv.set(&format!("{prefix}weight_decay"), t.weight_decay);
    kv.set(&format!("{prefix}patience"), t.patience);
}

const TRAIN_KEYS: [&str; 7] = [
    "hidden_sizes",
    "dropout_rate",
    "learning_rate",
    "batch_size",
    "epochs",
    "weight_decay",
    "patience",
];

impl NlpConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(|k| {
            matches!(
                k,
                "seed" | "dim" | "max_train_sentences" | "heldout_sentences" | "sentiment_heldout_fraction"
            ) || ["topic.", "sentiment."]
                .iter()
                .any(|p| k.strip_prefix(p).is_some_and(|r| TRAIN_KEYS.contains(&r)))
        })?;
        let mut c = NlpConfig::default();
        kv.read_into("seed", &mut c.seed)?;
        kv.read_into("dim", &mut c.dim)?;
        kv.read_into("max_train_sentences", &mut c.max_train_sentences)?;
        kv.read_into("heldout_sentences", &mut c.heldout_sentences)?;
        kv.read_into("sentiment_heldout_fraction", &mut c.sentiment_heldout_fraction)?;
        read_train(&kv.section("topic."), &mut c.topic.hidden_sizes, &mut c.topic.dropout_rate, &mut c.topic.train)?;
        read_train(
            &kv.section("sentiment."),
            &mut c.sentiment.hidden_sizes,
            &mut c.sentiment.dropout_rate,
            &mut c.sentiment.train,
        )?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("seed", self.seed);
        kv.set("dim", self.dim);
        kv.set("max_train_sentences", self.max_train_sentences);
        kv.set("heldout_sentences", self.heldout_sentences);
        kv.set("sentiment_heldout_fraction", self.sentiment_heldout_fraction);
        write_train(&mut kv, "topic.", &self.topic.hidden_sizes, self.topic.dropout_rate, &self.topic.train);
        write_train(
            &mut kv,
            "sentiment.",
            &self.sentiment.hidden_sizes,
            self.sentiment.dropout_rate,
            &self.sentiment.train,
        );
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if self.max_train_sentences == 0 {
            return Err(Error::config("max_train_sentences", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.sentiment_heldout_fraction) {
            return Err(Error::config("sentiment_heldout_fraction", "must lie in [0, 1)"));
        }
        for (key, d) in [
            ("topic.dropout_rate", self.topic.dropout_rate),
            ("sentiment.dropout_rate", self.sentiment.dropout_rate),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        self.topic.train.validate()?;
        self.sentiment.train.validate()
    }
}

pub struct TrainedNlp {
    pub encoder: HashingEncoder,
    pub topic: MLPModel,
    pub sentiment: SentimentModels,
    pub topic_micro_f1: f64,
    pub sentiment_accuracy: BTreeMap<RiskDomain, f64>,
    pub n_train_sentences: usize,
    pub n_heldout_sentences: usize,
}

/// Weak-labeled `(vector, multi-hot)` pairs for the chosen global sentence
/// positions, in position order.
fn weak_label_subset(
    corpus: &Corpus,
    lexicon: &Lexicon,
    encoder: &dyn SentenceEncoder,
    wanted: &[usize],
) -> Vec<(SentenceVector, Vec<f64>)> {
    let mut out = Vec::with_capacity(wanted.len());
    let mut pos = 0usize;
    let mut next = wanted.iter().peekable();
    'notes: for (_, a) in corpus.admissions() {
        for n in &a.notes {
            for s in textproc::split_sentences(&n.text) {
                match next.peek() {
                    None => break 'notes,
                    Some(&&w) if w == pos => {
                        out.push((encoder.encode(&s.tokens), lexicon.match_domains(&s.tokens).to_multi_hot()));
                        next.next();
                    }
                    _ => {}
                }
                pos += 1;
            }
        }
    }
    out
}

fn count_sentences(corpus: &Corpus) -> usize {
    corpus
        .admissions()
        .flat_map(|(_, a)| a.notes.iter())
        .map(|n| textproc::split_sentences(&n.text).len())
        .sum()
}

/// Train the topic model on weak labels from `corpus` and one sentiment
/// model per domain on `seed_records`.
pub fn train_nlp(
    corpus: &Corpus,
    lexicon: &Lexicon,
    seed_records: &[SentimentRecord],
    config: &NlpConfig,
    workers: usize,
) -> Result<TrainedNlp> {
    config.validate()?;
    let encoder = HashingEncoder::new(config.dim)?;
    let total = count_sentences(corpus);
    if total == 0 {
        return Err(Error::Fit("corpus has no sentences".into()));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = seed::rng(seed::derive(config.seed, 0));
    neural::shuffle(&mut rng, &mut order);
    let n_held = config.heldout_sentences.min(total / 5);
    let n_train = config.max_train_sentences.min(total - n_held);
    let mut held: Vec<usize> = order[..n_held].to_vec();
    let mut train: Vec<usize> = order[n_held..n_held + n_train].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    let held_data = weak_label_subset(corpus, lexicon, &encoder, &held);
    let mut train_data = weak_label_subset(corpus, lexicon, &encoder, &train);
    // Position order would put all of one admission's sentences together.
    neural::shuffle(&mut rng, &mut train_data);

    let topic_cfg = TopicModelConfig {
        train: TrainConfig {
            seed: seed::derive(config.seed, 1),
            ..config.topic.train.clone()
        },
        ..config.topic.clone()
    };
    let topic = domains::train_topic_model(&train_data, &topic_cfg)?;
    let topic_micro_f1 = if held_data.is_empty() {
        f64::NAN
    } else {
        domains::micro_f1(&topic, &held_data)?
    };

    let mut idx: Vec<usize> = (0..seed_records.len()).collect();
    neural::shuffle(&mut seed::rng(seed::derive(config.seed, 2)), &mut idx);
    let n_sent_held = (seed_records.len() as f64 * config.sentiment_heldout_fraction).floor() as usize;
    let (held_idx, train_idx) = idx.split_at(n_sent_held);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let mut held_idx = held_idx.to_vec();
    held_idx.sort_unstable();
    let sent_train: Vec<SentimentRecord> = train_idx.iter().map(|&i| seed_records[i].clone()).collect();
    let sent_held: Vec<SentimentRecord> = held_idx.iter().map(|&i| seed_records[i].clone()).collect();
    let sentiment_cfg = SentimentModelConfig {
        train: TrainConfig {
            seed: seed::derive(config.seed, 3),
            ..config.sentiment.train.clone()
        },
        ..config.sentiment.clone()
    };
    let sentiment = domains::train_sentiment_models(&sent_train, &encoder, &sentiment_cfg, workers)?;
    let mut sentiment_accuracy = BTreeMap::new();
    for (d, m) in &sentiment {
        let mine: Vec<SentimentRecord> = sent_held.iter().filter(|r| r.domain == *d).cloned().collect();
        if !mine.is_empty() {
            sentiment_accuracy.insert(*d, domains::sentiment_accuracy(m, &mine, &encoder)?);
        }
    }
    Ok(TrainedNlp {
        encoder,
        topic,
        sentiment,
        topic_micro_f1,
        sentiment_accuracy,
        n_train_sentences: train_data.len(),
        n_heldout_sentences: held_data.len(),
    })
}

pub const TOPIC_FILE: &str = "topic.json";

pub fn sentiment_file(d: RiskDomain) -> String {
    format!("sentiment_{}.json", d.slug())
}

/// Write the eight model files into `dir`; returns their paths.
pub fn save_models(dir: &Path, topic: &MLPModel, sentiment: &SentimentModels) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = vec![dir.join(TOPIC_FILE)];
    topic.save(&paths[0])?;
    for d in RiskDomain::ALL {
        let m = sentiment
            .get(&d)
            .ok_or_else(|| Error::config(d.name(), "no sentiment model for domain"))?;
        let p = dir.join(sentiment_file(d));
        m.save(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

pub struct LoadedModels {
    pub encoder: HashingEncoder,
    pub topic: MLPModel,
    pub sentiment: SentimentModels,
}

/// Load models written by [`save_models`], checking shapes agree.
pub fn load_models(dir: &Path) -> Result<LoadedModels> {
    let topic = MLPModel::load(&dir.join(TOPIC_FILE))?;
    if topic.spec.n_outputs != RiskDomain::ALL.len() {
        return Err(Error::Schema(format!(
            "topic model has {} outputs, expected {}",
            topic.spec.n_outputs,
            RiskDomain::ALL.len()
        )));
    }
    let dim = topic.spec.input_dim;
    let mut sentiment = SentimentModels::new();
    for d in RiskDomain::ALL {
        let m = MLPModel::load(&dir.join(sentiment_file(d)))?;
        if m.spec.input_dim != dim || m.spec.n_outputs != 3 {
            return Err(Error::Schema(format!(
                "sentiment model for {d} has shape {}->{}, expected {dim}->3",
                m.spec.input_dim, m.spec.n_outputs
            )));
        }
        sentiment.insert(d, m);
    }
    Ok(LoadedModels {
        encoder: HashingEncoder::new(dim)?,
        topic,
        sentiment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub tagging: TaggingMode,
    pub averaging: Averaging,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            tagging: TaggingMode::Model,
            averaging: Averaging::TwoStage,
        }
    }
}

impl ExtractConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(|k| k == "tagging" || k == "averaging")?;
        let mut c = ExtractConfig::default();
        if let Some(v) = kv.get("tagging") {
            c.tagging = match v {
                "model" => TaggingMode::Model,
                "lexicon" => TaggingMode::Lexicon,
                _ => return Err(Error::config("tagging", "expected model or lexicon")),
            };
        }
        if let Some(v) = kv.get("averaging") {
            c.averaging = match v {
                "two_stage" => Averaging::TwoStage,
                "pooled" => Averaging::Pooled,
                _ => return Err(Error::config("averaging", "expected two_stage or pooled")),
            };
        }
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set(
            "tagging",
            match self.tagging {
                TaggingMode::Model => "model",
                TaggingMode::Lexicon => "lexicon",
            },
        );
        kv.set(
            "averaging",
            match self.averaging {
                Averaging::TwoStage => "two_stage",
                Averaging::Pooled => "pooled",
            },
        );
        kv
    }
}

/// Feature vectors for every admission, in corpus order.
pub fn extract_features(corpus: &Corpus, nlp: &NlpModels, workers: usize) -> Result<Vec<AdmissionFeatures>> {
    let corpus = derive_labels(corpus.clone());
    let per_patient = seed::try_par_map(workers, corpus.patients.len(), |i| -> Result<Vec<AdmissionFeatures>> {
        let p = &corpus.patients[i];
        let fields = p.admissions.iter().map(resolve_admission).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(p.admissions.len());
        for (j, a) in p.admissions.iter().enumerate() {
            let prior: Vec<_> = p.admissions[..j].iter().zip(&fields[..j]).collect();
            let history = features::history_features(&prior, a.admit_date);
            let summary = nlp.summarize_admission(a)?;
            out.push(features::assemble(p, a, &fields[j], &summary, &history)?);
        }
        Ok(out)
    })?;
    Ok(per_patient.into_iter().flatten().collect())
}

/// Features and the raw (un-imputed) matrix for a corpus.
pub fn extract_matrix(corpus: &Corpus, nlp: &NlpModels, workers: usize) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix::from_features(&extract_features(corpus, nlp, workers)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngen::{self, CountRange, GenConfig};

    fn tiny_nlp() -> NlpConfig {
        let mut c = NlpConfig {
            max_train_sentences: 600,
            heldout_sentences: 200,
            ..NlpConfig::default()
        };
        c.topic.hidden_sizes = vec![16];
        c.topic.train.epochs = 3;
        c.sentiment.hidden_sizes = vec![8];
        c.sentiment.train.epochs = 3;
        c
    }

    #[test]
    fn train_save_load_extract() {
        let cfg = GenConfig {
            n_patients: 8,
            tokens_per_note: CountRange::new(60, 150, 100.0),
            seed_set_size: 7 * 3 * 25,
            ..GenConfig::default()
        };
        let corpus = syngen::generate(&cfg).unwrap();
        let seeds = syngen::sentiment_seed_set(&cfg);
        let lex = Lexicon::default();
        let trained = train_nlp(&corpus, &lex, &seeds, &tiny_nlp(), 2).unwrap();
        assert!(trained.topic_micro_f1.is_finite());
        assert_eq!(trained.sentiment.len(), 7);

        let dir = tempfile::tempdir().unwrap();
        assert_eq!(save_models(dir.path(), &trained.topic, &trained.sentiment).unwrap().len(), 8);
        let loaded = load_models(dir.path()).unwrap();
        let nlp = NlpModels {
            encoder: &loaded.encoder,
            lexicon: &lex,
            topic: Some(&loaded.topic),
            sentiment: &loaded.sentiment,
            tagging: TaggingMode::Model,
            averaging: Averaging::TwoStage,
        };
        let a = extract_matrix(&corpus, &nlp, 1).unwrap();
        let b = extract_matrix(&corpus, &nlp, 3).unwrap();
        assert_eq!(a.n_rows(), corpus.n_admissions());
        assert_eq!(a.csv_string(), b.csv_string());

        std::fs::remove_file(dir.path().join(sentiment_file(RiskDomain::ALL[3]))).unwrap();
        assert!(load_models(dir.path()).err().unwrap().is_io());
    }

    #[test]
    fn too_few_seed_records_is_config_error() {
        let cfg = GenConfig {
            n_patients: 3,
            tokens_per_note: CountRange::new(60, 150, 100.0),
            seed_set_size: 70,
            ..GenConfig::default()
        };
        let corpus = syngen::generate(&cfg).unwrap();
        let err = train_nlp(&corpus, &Lexicon::default(), &syngen::sentiment_seed_set(&cfg), &tiny_nlp(), 1)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn nlp_kv_round_trip() {
        let mut c = NlpConfig::default();
        c.topic.hidden_sizes = vec![16];
        c.sentiment.train.epochs = 3;
        assert_eq!(NlpConfig::from_kv(&c.to_kv()).unwrap(), c);
        let mut kv = KvConfig::new();
        kv.set("topic.bogus", 1);
        assert!(NlpConfig::from_kv(&kv).is_err());
    }
}
