//! Six natively implemented binary classifiers behind one interface.
//!
//! Linear kinds and the MLP standardize inputs with training statistics;
//! trees and forests consume raw values. Every kind is deterministic given
//! its seed, and forests give the same bits for any worker count.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::neural::{self, MLPModel, MLPSpec, OutputKind, TrainConfig};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SgdLinear,
    LogisticRegression,
    LinearSvc,
    DecisionTree,
    RandomForest,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::SgdLinear,
        ModelKind::LogisticRegression,
        ModelKind::LinearSvc,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SgdLinear => "sgd_linear",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::LinearSvc => "linear_svc",
            ModelKind::DecisionTree => "decision_tree",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::SgdLinear | ModelKind::LogisticRegression | ModelKind::LinearSvc)
    }

    pub fn is_tree(self) -> bool {
        matches!(self, ModelKind::DecisionTree | ModelKind::RandomForest)
    }

    pub fn default_importance(self) -> ImportanceMethod {
        if self.is_tree() {
            ImportanceMethod::Impurity
        } else if self.is_linear() {
            ImportanceMethod::CoefMagnitude
        } else {
            ImportanceMethod::Permutation
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, width: usize) -> usize {
        match self {
            MaxFeatures::All => width,
            MaxFeatures::Sqrt => ((width as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Count(n) => n.clamp(1, width.max(1)),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(MaxFeatures::All),
            "sqrt" => Some(MaxFeatures::Sqrt),
            n => n.parse().ok().filter(|&n| n > 0).map(MaxFeatures::Count),
        }
    }

    fn render(self) -> String {
        match self {
            MaxFeatures::All => "all".into(),
            MaxFeatures::Sqrt => "sqrt".into(),
            MaxFeatures::Count(n) => n.to_string(),
        }
    }
}

/// Hyperparameters of all kinds; each kind reads the fields it documents.
///
/// - linear: `c` (logistic regression, linear SVC), `alpha` (SGD),
///   `learning_rate`, `epochs` (iterations for full-batch kinds), `batch_size`.
/// - trees: `max_depth`, `min_samples_leaf`, `min_samples_split`,
///   `max_features`; forests add `n_trees` and `bootstrap`.
/// - mlp: `hidden_sizes`, `dropout_rate`, `learning_rate`, `epochs`,
///   `batch_size`, `weight_decay`, `patience`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub c: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub n_trees: usize,
    pub bootstrap: bool,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
}

impl Hyperparameters {
    pub fn defaults(kind: ModelKind) -> Self {
        let base = Hyperparameters {
            c: 1.0,
            alpha: 1e-4,
            learning_rate: 0.1,
            epochs: 300,
            batch_size: 16,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
            n_trees: 100,
            bootstrap: true,
            hidden_sizes: vec![32],
            dropout_rate: 0.2,
            weight_decay: 1e-4,
            patience: 20,
        };
        match kind {
            ModelKind::SgdLinear => Hyperparameters {
                learning_rate: 0.01,
                epochs: 50,
                ..base
            },
            ModelKind::LogisticRegression => Hyperparameters {
                learning_rate: 0.5,
                ..base
            },
            ModelKind::LinearSvc => base,
            ModelKind::DecisionTree => Hyperparameters {
                max_depth: Some(10),
                ..base
            },
            ModelKind::RandomForest => Hyperparameters {
                max_features: MaxFeatures::Sqrt,
                ..base
            },
            ModelKind::Mlp => Hyperparameters {
                learning_rate: 0.05,
                epochs: 100,
                batch_size: 32,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper: Hyperparameters,
    pub seed: u64,
}

const HYPER_KEYS: [&str; 15] = [
    "c",
    "alpha",
    "learning_rate",
    "epochs",
    "batch_size",
    "max_depth",
    "min_samples_leaf",
    "min_samples_split",
    "max_features",
    "n_trees",
    "bootstrap",
    "hidden_sizes",
    "dropout_rate",
    "weight_decay",
    "patience",
];

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hyper: Hyperparameters::defaults(kind),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Read `kind`, `seed` and hyperparameter keys. Hyperparameters start
    /// from the chosen kind's defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(|k| k == "kind" || k == "seed" || HYPER_KEYS.contains(&k))?;
        let kind = match kv.get("kind") {
            None => ModelKind::RandomForest,
            Some(s) => ModelKind::parse(s).ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::config("kind", format!("unknown model kind `{s}` (expected one of {})", names.join(", ")))
            })?,
        };
        let mut spec = ModelSpec::new(kind);
        kv.read_into("seed", &mut spec.seed)?;
        let h = &mut spec.hyper;
        kv.read_into("c", &mut h.c)?;
        kv.read_into("alpha", &mut h.alpha)?;
        kv.read_into("learning_rate", &mut h.learning_rate)?;
        kv.read_into("epochs", &mut h.epochs)?;
        kv.read_into("batch_size", &mut h.batch_size)?;
        kv.read_into("min_samples_leaf", &mut h.min_samples_leaf)?;
        kv.read_into("min_samples_split", &mut h.min_samples_split)?;
        kv.read_into("n_trees", &mut h.n_trees)?;
        kv.read_into("bootstrap", &mut h.bootstrap)?;
        kv.read_into("dropout_rate", &mut h.dropout_rate)?;
        kv.read_into("weight_decay", &mut h.weight_decay)?;
        kv.read_into("patience", &mut h.patience)?;
        if let Some(v) = kv.get("max_depth") {
            h.max_depth = match v {
                "none" => None,
                n => Some(n.parse().map_err(|_| Error::config("max_depth", "expected an integer or `none`"))?),
            };
        }
        if let Some(v) = kv.get("max_features") {
            h.max_features = MaxFeatures::parse(v)
                .ok_or_else(|| Error::config("max_features", "expected `all`, `sqrt` or a positive integer"))?;
        }
        if let Some(v) = kv.get("hidden_sizes") {
            h.hidden_sizes = v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config("hidden_sizes", "expected comma-separated layer widths"))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let h = &self.hyper;
        let mut kv = KvConfig::new();
        kv.set("kind", self.kind);
        kv.set("seed", self.seed);
        kv.set("c", h.c);
        kv.set("alpha", h.alpha);
        kv.set("learning_rate", h.learning_rate);
        kv.set("epochs", h.epochs);
        kv.set("batch_size", h.batch_size);
        kv.set("max_depth", h.max_depth.map_or("none".to_string(), |d| d.to_string()));
        kv.set("min_samples_leaf", h.min_samples_leaf);
        kv.set("min_samples_split", h.min_samples_split);
        kv.set("max_features", h.max_features.render());
        kv.set("n_trees", h.n_trees);
        kv.set("bootstrap", h.bootstrap);
        let hs: Vec<String> = h.hidden_sizes.iter().map(|x| x.to_string()).collect();
        kv.set("hidden_sizes", hs.join(","));
        kv.set("dropout_rate", h.dropout_rate);
        kv.set("weight_decay", h.weight_decay);
        kv.set("patience", h.patience);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, "must be positive and finite"))
            }
        };
        match self.kind {
            ModelKind::SgdLinear => {
                positive("learning_rate", h.learning_rate)?;
                if !(h.alpha >= 0.0 && h.alpha.is_finite()) {
                    return Err(Error::config("alpha", "must be finite and non-negative"));
                }
            }
            ModelKind::LogisticRegression | ModelKind::LinearSvc => {
                positive("c", h.c)?;
                positive("learning_rate", h.learning_rate)?;
            }
            ModelKind::DecisionTree | ModelKind::RandomForest => {
                if h.min_samples_leaf == 0 {
                    return Err(Error::config("min_samples_leaf", "must be positive"));
                }
                if h.min_samples_split < 2 {
                    return Err(Error::config("min_samples_split", "must be at least 2"));
                }
                if h.max_depth == Some(0) {
                    return Err(Error::config("max_depth", "must be positive or `none`"));
                }
                if self.kind == ModelKind::RandomForest && h.n_trees == 0 {
                    return Err(Error::config("n_trees", "must be positive"));
                }
            }
            ModelKind::Mlp => {
                positive("learning_rate", h.learning_rate)?;
                if !(0.0..1.0).contains(&h.dropout_rate) {
                    return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
                }
            }
        }
        if h.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if h.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Per-column centering and scaling. Constant columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|c| {
                let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub scaler: Standardizer,
    /// Weights on standardized inputs.
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    fn margin_std(&self, z: &[f64]) -> f64 {
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.margin_std(&self.scaler.transform(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Fraction of positive training samples.
        prob: f64,
        n: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Unnormalized Gini decrease per feature.
    pub impurity_decrease: Vec<f64>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { prob, .. } => return *prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    fn normalized_importance(&self) -> Vec<f64> {
        normalize(self.impurity_decrease.clone())
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: Option<usize>,
    min_leaf: usize,
    min_split: usize,
    mtry: usize,
    rng: Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, samples: &[usize]) -> usize {
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            prob: pos as f64 / samples.len() as f64,
            n: samples.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, samples: &mut [usize]) -> Option<BestSplit> {
        let n = samples.len();
        let width = self.rows[0].len();
        let total_pos = samples.iter().filter(|&&i| self.y[i]).count() as f64;
        let parent = n as f64 * gini(total_pos, n as f64);
        let mut order: Vec<usize> = (0..width).collect();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        // Draw features without replacement until `mtry` non-constant ones
        // have been examined.
        for k in 0..width {
            if visited >= self.mtry {
                break;
            }
            let j = self.rng.random_range(k..width);
            order.swap(k, j);
            let f = order[k];
            let rows = self.rows;
            samples.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
            let lo = rows[samples[0]][f];
            let hi = rows[samples[n - 1]][f];
            if lo == hi {
                continue;
            }
            visited += 1;
            let mut left_pos = 0.0;
            for i in 0..n - 1 {
                if self.y[samples[i]] {
                    left_pos += 1.0;
                }
                let nl = i + 1;
                let nr = n - nl;
                let x = rows[samples[i]][f];
                if x == rows[samples[i + 1]][f] || nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let child = nl as f64 * gini(left_pos, nl as f64) + nr as f64 * gini(total_pos - left_pos, nr as f64);
                let gain = parent - child;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: x,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12)
    }

    fn build(&mut self, samples: &mut [usize], depth: usize) -> usize {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        let stop = pos == 0
            || pos == n
            || n < self.min_split
            || n < 2 * self.min_leaf
            || self.max_depth.is_some_and(|d| depth >= d);
        if stop {
            return self.leaf(samples);
        }
        let Some(split) = self.best_split(samples) else {
            return self.leaf(samples);
        };
        self.importance[split.feature] += split.gain;
        let f = split.feature;
        let rows = self.rows;
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| rows[i][f] <= split.threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { prob: 0.0, n: 0 });
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[me] = Node::Split {
            feature: f,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        me
    }
}

fn grow_tree(rows: &[Vec<f64>], y: &[bool], h: &Hyperparameters, seed: u64, bootstrap: bool) -> Tree {
    let n = rows.len();
    let width = rows[0].len();
    let mut rng = seed::rng(seed);
    let mut samples: Vec<usize> = if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = TreeBuilder {
        rows,
        y,
        max_depth: h.max_depth,
        min_leaf: h.min_samples_leaf,
        min_split: h.min_samples_split,
        mtry: h.max_features.resolve(width),
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; width],
    };
    b.build(&mut samples, 0);
    Tree {
        nodes: b.nodes,
        impurity_decrease: b.importance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Params {
    Linear(LinearModel),
    Tree(Tree),
    Forest(Vec<Tree>),
    Mlp { scaler: Standardizer, model: MLPModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub schema_fingerprint: String,
    pub params: Params,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_training_data(m: &FeatureMatrix) -> Result<()> {
    if m.n_rows() == 0 || m.width() == 0 {
        return Err(Error::Fit("empty training matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::Invalid("training matrix has non-finite entries".into()));
    }
    let pos = m.labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == m.n_rows() {
        return Err(Error::Fit("training labels contain a single class".into()));
    }
    Ok(())
}

fn standardized(m: &FeatureMatrix) -> (Standardizer, Vec<Vec<f64>>) {
    let s = Standardizer::fit(&m.rows);
    let z = m.rows.iter().map(|r| s.transform(r)).collect();
    (s, z)
}

fn train_logistic(z: &[Vec<f64>], y: &[bool], h: &Hyperparameters) -> (Vec<f64>, f64) {
    let n = z.len() as f64;
    let d = z[0].len();
    let lambda = 1.0 / (h.c * n);
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut g = vec![0.0; d];
    for _ in 0..h.epochs {
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut gb = 0.0;
        for (r, &t) in z.iter().zip(y) {
            let m = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let e = logistic(m) - f64::from(t);
            gb += e;
            for (gi, x) in g.iter_mut().zip(r) {
                *gi += e * x;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= h.learning_rate * (gi / n + lambda * *wi);
        }
        b -= h.learning_rate * gb / n;
    }
    (w, b)
}

fn train_svc(z: &[Vec<f64>], y: &[bool], h: &Hyperparameters) -> (Vec<f64>, f64) {
    let n = z.len() as f64;
    let d = z[0].len();
    let lambda = 1.0 / (h.c * n);
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut g = vec![0.0; d];
    for t in 0..h.epochs {
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut gb = 0.0;
        for (r, &yy) in z.iter().zip(y) {
            let s = if yy { 1.0 } else { -1.0 };
            let m = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            if s * m < 1.0 {
                gb -= s;
                for (gi, x) in g.iter_mut().zip(r) {
                    *gi -= s * x;
                }
            }
        }
        let eta = h.learning_rate / ((t + 1) as f64).sqrt();
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * (gi / n + lambda * *wi);
        }
        b -= eta * gb / n;
    }
    (w, b)
}

fn train_sgd(z: &[Vec<f64>], y: &[bool], h: &Hyperparameters, seed: u64) -> (Vec<f64>, f64) {
    let d = z[0].len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut g = vec![0.0; d];
    for epoch in 0..h.epochs {
        neural::shuffle(&mut rng, &mut order);
        let eta = h.learning_rate / (1.0 + epoch as f64).sqrt();
        for batch in order.chunks(h.batch_size) {
            g.iter_mut().for_each(|x| *x = 0.0);
            let mut gb = 0.0;
            for &i in batch {
                let s = if y[i] { 1.0 } else { -1.0 };
                let m = b + z[i].iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                if s * m < 1.0 {
                    gb -= s;
                    for (gi, x) in g.iter_mut().zip(&z[i]) {
                        *gi -= s * x;
                    }
                }
            }
            let k = batch.len() as f64;
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= eta * (gi / k + h.alpha * *wi);
            }
            b -= eta * gb / k;
        }
    }
    (w, b)
}

/// Fit `spec` on `m`. Forests grow trees on up to `workers` threads.
pub fn train(spec: &ModelSpec, m: &FeatureMatrix, workers: usize) -> Result<TrainedClassifier> {
    spec.validate()?;
    check_training_data(m)?;
    let h = &spec.hyper;
    let params = match spec.kind {
        ModelKind::LogisticRegression | ModelKind::LinearSvc | ModelKind::SgdLinear => {
            let (scaler, z) = standardized(m);
            let (weights, bias) = match spec.kind {
                ModelKind::LogisticRegression => train_logistic(&z, &m.labels, h),
                ModelKind::LinearSvc => train_svc(&z, &m.labels, h),
                _ => train_sgd(&z, &m.labels, h, spec.seed),
            };
            Params::Linear(LinearModel { scaler, weights, bias })
        }
        ModelKind::DecisionTree => Params::Tree(grow_tree(&m.rows, &m.labels, h, seed::derive(spec.seed, 0), false)),
        ModelKind::RandomForest => Params::Forest(seed::par_map(workers, h.n_trees, |t| {
            grow_tree(&m.rows, &m.labels, h, seed::derive(spec.seed, t as u64), h.bootstrap)
        })),
        ModelKind::Mlp => {
            let (scaler, z) = standardized(m);
            let data: Vec<(Vec<f64>, Vec<f64>)> =
                z.into_iter().zip(&m.labels).map(|(r, &y)| (r, vec![f64::from(y)])).collect();
            let mspec = MLPSpec::new(m.width(), h.hidden_sizes.clone(), OutputKind::Sigmoid, 1).with_dropout(h.dropout_rate);
            let cfg = TrainConfig {
                learning_rate: h.learning_rate,
                batch_size: h.batch_size,
                epochs: h.epochs,
                seed: spec.seed,
                weight_decay: h.weight_decay,
                patience: h.patience,
            };
            Params::Mlp {
                scaler,
                model: neural::train_mlp(&mspec, &data, &cfg)?,
            }
        }
    };
    Ok(TrainedClassifier {
        spec: spec.clone(),
        n_features: m.width(),
        schema_fingerprint: m.schema.fingerprint(),
        params,
    })
}

const FORMAT: &str = "readmit-classifier";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    model: TrainedClassifier,
}

impl TrainedClassifier {
    fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let p = match &self.params {
            Params::Linear(l) => logistic(l.margin(row)),
            Params::Tree(t) => t.predict(row),
            Params::Forest(ts) => ts.iter().map(|t| t.predict(row)).sum::<f64>() / ts.len() as f64,
            Params::Mlp { scaler, model } => model.predict(&scaler.transform(row))?[0],
        };
        Ok(p.clamp(0.0, 1.0))
    }

    /// Positive-class probability per row.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.n_features {
                    return Err(Error::Dimension {
                        expected: self.n_features,
                        got: r.len(),
                    });
                }
                if r.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Invalid("non-finite feature value at prediction".into()));
                }
                self.predict_row(r)
            })
            .collect()
    }

    /// Like [`predict_proba`](Self::predict_proba), refusing a matrix whose
    /// schema differs from the training schema.
    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        let fp = m.schema.fingerprint();
        if fp != self.schema_fingerprint {
            return Err(Error::Schema(format!(
                "model trained on schema {} cannot score schema {}",
                &self.schema_fingerprint[..12],
                &fp[..12]
            )));
        }
        self.predict_proba(&m.rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Container {
            format: FORMAT.into(),
            version: VERSION,
            model: self.clone(),
        })
        .expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Container = serde_json::from_str(text).map_err(|e| Error::Malformed {
            line: e.line(),
            message: e.to_string(),
        })?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Unsupported(format!("classifier container {} v{}", c.format, c.version)));
        }
        Ok(c.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Impurity,
    CoefMagnitude,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub method: ImportanceMethod,
    pub values: Vec<f64>,
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v
}

/// Permutations per column for [`ImportanceMethod::Permutation`].
pub const PERMUTATION_REPEATS: usize = 5;

/// Column importances. `m` is only read by the permutation method, which
/// scores F1 drops on it; `seed` drives its shuffles.
pub fn importances(
    model: &TrainedClassifier,
    m: &FeatureMatrix,
    method: ImportanceMethod,
    seed: u64,
) -> Result<ImportanceVector> {
    let values = match (method, &model.params) {
        (ImportanceMethod::Impurity, Params::Tree(t)) => t.normalized_importance(),
        (ImportanceMethod::Impurity, Params::Forest(ts)) => {
            let mut acc = vec![0.0; model.n_features];
            for t in ts {
                for (a, v) in acc.iter_mut().zip(t.normalized_importance()) {
                    *a += v;
                }
            }
            normalize(acc)
        }
        (ImportanceMethod::CoefMagnitude, Params::Linear(l)) => normalize(l.weights.iter().map(|w| w.abs()).collect()),
        (ImportanceMethod::Permutation, _) => permutation_importance(model, m, seed)?,
        (method, _) => {
            return Err(Error::Unsupported(format!(
                "{method:?} importance for a {} model",
                model.spec.kind
            )))
        }
    };
    Ok(ImportanceVector { method, values })
}

fn permutation_importance(model: &TrainedClassifier, m: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
    if m.width() != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            got: m.width(),
        });
    }
    let f1_of = |rows: &[Vec<f64>]| -> Result<f64> {
        let p = model.predict_proba(rows)?;
        let pred: Vec<bool> = p.iter().map(|&x| x >= 0.5).collect();
        Ok(crate::eval::f1_score(&m.labels, &pred))
    };
    let base = f1_of(&m.rows)?;
    let mut out = vec![0.0; m.width()];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut rng = seed::rng(seed::derive(seed, c as u64));
        let mut rows = m.rows.clone();
        let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let mut drop = 0.0;
        for _ in 0..PERMUTATION_REPEATS {
            neural::shuffle(&mut rng, &mut col);
            for (r, v) in rows.iter_mut().zip(&col) {
                r[c] = *v;
            }
            drop += base - f1_of(&rows)?;
        }
        *slot = (drop / PERMUTATION_REPEATS as f64).max(0.0);
    }
    Ok(normalize(out))
}
