//! Metrics and the experimental protocol: repeated shuffle-split
//! evaluation, the three-configuration ablation, cross-validated recursive
//! feature elimination and consensus elimination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ImportanceMethod, ModelSpec};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Imputer, SENTENCE_PREFIX, SENTIMENT_PREFIX};
use crate::neural;
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn tally(y_true: &[bool], y_pred: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.r#fn += 1,
            }
        }
        c
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.r#fn;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }

    /// Binary F1 on the positive class; 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.r#fn;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn f1_score(y_true: &[bool], y_pred: &[bool]) -> f64 {
    Confusion::tally(y_true, y_pred).f1()
}

/// Mann-Whitney AUC from mid-ranks, so tied scores count one half.
pub fn auc(y_true: &[bool], y_score: &[f64]) -> Result<f64> {
    if y_true.len() != y_score.len() {
        return Err(Error::Dimension {
            expected: y_true.len(),
            got: y_score.len(),
        });
    }
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut idx: Vec<usize> = (0..y_score.len()).collect();
    idx.sort_by(|&a, &b| y_score[a].total_cmp(&y_score[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && y_score[idx[j + 1]] == y_score[idx[i]] {
            j += 1;
        }
        // Ranks are 1-based; the group i..=j shares their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * idx[i..=j].iter().filter(|&&k| y_true[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub threshold: f64,
}

/// Accuracy and F1 predict positive when `score >= threshold`.
pub fn metrics(y_true: &[bool], y_score: &[f64], threshold: f64) -> Result<MetricSet> {
    if let Some(s) = y_score.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Invalid(format!("score {s} outside [0, 1]")));
    }
    let auc = auc(y_true, y_score)?;
    let pred: Vec<bool> = y_score.iter().map(|&s| s >= threshold).collect();
    let c = Confusion::tally(y_true, &pred);
    Ok(MetricSet {
        accuracy: c.accuracy(),
        auc,
        f1: c.f1(),
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    AdmissionLevel,
    PatientGrouped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub stratified: bool,
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            stratified: true,
            grouping: Grouping::AdmissionLevel,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// `(train, test)` row indices, each sorted ascending.
pub fn split(m: &FeatureMatrix, config: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    config.validate()?;
    let n = m.n_rows();
    let mut rng = seed::rng(config.seed);
    let mut test = match config.grouping {
        Grouping::AdmissionLevel if config.stratified => {
            let mut test = Vec::new();
            for class in [false, true] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| m.labels[i] == class).collect();
                if idx.len() < 2 {
                    return Err(Error::Split(format!(
                        "class {} has {} rows, need at least 2",
                        class as u8,
                        idx.len()
                    )));
                }
                neural::shuffle(&mut rng, &mut idx);
                let k = ((idx.len() as f64 * config.test_fraction).round() as usize).clamp(1, idx.len() - 1);
                test.extend_from_slice(&idx[..k]);
            }
            test
        }
        Grouping::AdmissionLevel => {
            if n < 2 {
                return Err(Error::Split("need at least 2 rows".into()));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            neural::shuffle(&mut rng, &mut idx);
            let k = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 1);
            idx.truncate(k);
            idx
        }
        Grouping::PatientGrouped => grouped_test_rows(m, config, &mut rng)?,
    };
    test.sort_unstable();
    let in_test: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<usize> = (0..n).filter(|i| !in_test.contains(i)).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split("split left one side empty".into()));
    }
    Ok((train, test))
}

/// Whole patients go to the test side, in shuffled order, while they fit
/// within the per-class targets (or the overall target when unstratified).
fn grouped_test_rows(m: &FeatureMatrix, config: &SplitConfig, rng: &mut seed::Rng) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in m.groups.iter().enumerate() {
        groups.entry(g.as_str()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Split("grouped split needs at least 2 patients".into()));
    }
    let mut order: Vec<&Vec<usize>> = groups.values().collect();
    neural::shuffle(rng, &mut order);
    let n_pos = m.labels.iter().filter(|&&y| y).count();
    let n_neg = m.n_rows() - n_pos;
    let f = config.test_fraction;
    let target_pos = (n_pos as f64 * f).round() as usize;
    let target_neg = (n_neg as f64 * f).round() as usize;
    let target = (m.n_rows() as f64 * f).round().max(1.0) as usize;
    let (mut tp, mut tn) = (0, 0);
    let mut test = Vec::new();
    for g in order {
        let gp = g.iter().filter(|&&i| m.labels[i]).count();
        let gn = g.len() - gp;
        let fits = if config.stratified {
            tp + gp <= target_pos.max(1) && tn + gn <= target_neg.max(1)
        } else {
            tp + tn + g.len() <= target
        };
        if fits {
            tp += gp;
            tn += gn;
            test.extend_from_slice(g);
        }
    }
    if test.is_empty() || test.len() == m.n_rows() {
        return Err(Error::Split("no feasible patient-grouped split".into()));
    }
    if config.stratified && (tp == 0 || tn == 0 || tp == n_pos || tn == n_neg) {
        return Err(Error::Split("grouped split cannot place both classes on both sides".into()));
    }
    Ok(test)
}

/// Stratified fold assignment: fold id per row.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed);
    let mut fold = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Split(format!(
                "class {} has {} rows, fewer than {k} folds",
                class as u8,
                idx.len()
            )));
        }
        neural::shuffle(&mut rng, &mut idx);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_runs: usize,
    pub split: SplitConfig,
    pub threshold: f64,
    pub top_k: usize,
    /// `None` uses the model kind's default method.
    pub importance: Option<ImportanceMethod>,
    pub master_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_runs: 100,
            split: SplitConfig::default(),
            threshold: 0.5,
            top_k: 10,
            importance: None,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeConfig {
    pub folds: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub importance: Option<ImportanceMethod>,
}

impl Default for RfeConfig {
    fn default() -> Self {
        RfeConfig {
            folds: 3,
            repeats: 30,
            master_seed: 0,
            importance: None,
        }
    }
}

fn parse_importance(v: &str) -> Result<Option<ImportanceMethod>> {
    Ok(match v {
        "default" => None,
        "impurity" => Some(ImportanceMethod::Impurity),
        "coef_magnitude" => Some(ImportanceMethod::CoefMagnitude),
        "permutation" => Some(ImportanceMethod::Permutation),
        _ => return Err(Error::config("importance", format!("unknown method `{v}`"))),
    })
}

fn importance_name(m: Option<ImportanceMethod>) -> &'static str {
    match m {
        None => "default",
        Some(ImportanceMethod::Impurity) => "impurity",
        Some(ImportanceMethod::CoefMagnitude) => "coef_magnitude",
        Some(ImportanceMethod::Permutation) => "permutation",
    }
}

/// All protocol settings read from one flat config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub eval: EvalConfig,
    pub rfe: RfeConfig,
    pub model: ModelSpec,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            eval: EvalConfig::default(),
            rfe: RfeConfig::default(),
            model: ModelSpec::new(classifiers::ModelKind::RandomForest),
        }
    }
}

impl ProtocolConfig {
    /// Keys: `seed`, `n_runs`, `test_fraction`, `stratified`, `grouping`,
    /// `threshold`, `top_k`, `importance`, `folds`, `repeats`, and `model.*`
    /// for the classifier.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        const KEYS: [&str; 10] = [
            "seed",
            "n_runs",
            "test_fraction",
            "stratified",
            "grouping",
            "threshold",
            "top_k",
            "importance",
            "folds",
            "repeats",
        ];
        kv.reject_unknown(|k| KEYS.contains(&k) || k.starts_with("model."))?;
        let mut c = ProtocolConfig {
            model: ModelSpec::from_kv(&kv.section("model."))?,
            ..ProtocolConfig::default()
        };
        let mut seed = 0u64;
        kv.read_into("seed", &mut seed)?;
        c.eval.master_seed = seed;
        c.rfe.master_seed = seed;
        kv.read_into("n_runs", &mut c.eval.n_runs)?;
        kv.read_into("test_fraction", &mut c.eval.split.test_fraction)?;
        kv.read_into("stratified", &mut c.eval.split.stratified)?;
        if let Some(g) = kv.get("grouping") {
            c.eval.split.grouping = match g {
                "admission_level" => Grouping::AdmissionLevel,
                "patient_grouped" => Grouping::PatientGrouped,
                _ => return Err(Error::config("grouping", "expected admission_level or patient_grouped")),
            };
        }
        kv.read_into("threshold", &mut c.eval.threshold)?;
        kv.read_into("top_k", &mut c.eval.top_k)?;
        if let Some(v) = kv.get("importance") {
            c.eval.importance = parse_importance(v)?;
            c.rfe.importance = c.eval.importance;
        }
        kv.read_into("folds", &mut c.rfe.folds)?;
        kv.read_into("repeats", &mut c.rfe.repeats)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("seed", self.eval.master_seed);
        kv.set("n_runs", self.eval.n_runs);
        kv.set("test_fraction", self.eval.split.test_fraction);
        kv.set("stratified", self.eval.split.stratified);
        kv.set(
            "grouping",
            match self.eval.split.grouping {
                Grouping::AdmissionLevel => "admission_level",
                Grouping::PatientGrouped => "patient_grouped",
            },
        );
        kv.set("threshold", self.eval.threshold);
        kv.set("top_k", self.eval.top_k);
        kv.set("importance", importance_name(self.eval.importance));
        kv.set("folds", self.rfe.folds);
        kv.set("repeats", self.rfe.repeats);
        for (k, v) in self.model.to_kv().iter() {
            kv.set(&format!("model.{k}"), v);
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.eval.split.validate()?;
        if self.eval.n_runs == 0 {
            return Err(Error::config("n_runs", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::config("threshold", "must lie in [0, 1]"));
        }
        if self.rfe.folds < 2 {
            return Err(Error::config("folds", "must be at least 2"));
        }
        if self.rfe.repeats == 0 {
            return Err(Error::config("repeats", "must be positive"));
        }
        self.model.validate()
    }
}

/// Fit imputation on `train`, train, and score on `test`.
fn fit_and_score(
    m: &FeatureMatrix,
    train: &[usize],
    test: &[usize],
    spec: &ModelSpec,
    importance: Option<ImportanceMethod>,
    imp_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let imputer = Imputer::fit(m, train);
    let tr = imputer.apply(&m.subset_rows(train))?;
    let te = imputer.apply(&m.subset_rows(test))?;
    let model = classifiers::train(spec, &tr, 1)?;
    let scores = model.predict_proba(&te.rows)?;
    let method = importance.unwrap_or(spec.kind.default_importance());
    let imp = classifiers::importances(&model, &tr, method, imp_seed)?;
    Ok((scores, imp.values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub metrics: MetricSet,
    /// Highest-importance columns, best first.
    pub top_features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Summary::default();
        }
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Summary,
    pub auc: Summary,
    pub f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedEval {
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
    /// Mean importance per column over runs.
    pub importances: BTreeMap<String, f64>,
}

fn top_k(names: &[String], values: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (names[i].clone(), values[i])).collect()
}

/// Run seed for repeat `r`.
pub fn run_seed(master: u64, r: usize) -> u64 {
    seed::derive(master, r as u64)
}

/// `n_runs` shuffle splits; run `r` splits with `run_seed(master, r)` and
/// trains with a model seed derived from it.
pub fn repeated_eval(m: &FeatureMatrix, spec: &ModelSpec, config: &EvalConfig, workers: usize) -> Result<RepeatedEval> {
    spec.validate()?;
    let runs = seed::try_par_map(workers, config.n_runs, |r| -> Result<(RunResult, Vec<f64>)> {
        let s = run_seed(config.master_seed, r);
        let split_cfg = SplitConfig {
            seed: s,
            ..config.split.clone()
        };
        let (train, test) = split(m, &split_cfg)?;
        let run_spec = spec.clone().with_seed(seed::derive(s, 1));
        let (scores, imp) = fit_and_score(m, &train, &test, &run_spec, config.importance, seed::derive(s, 2))?;
        let y: Vec<bool> = test.iter().map(|&i| m.labels[i]).collect();
        let metrics = metrics(&y, &scores, config.threshold)?;
        Ok((
            RunResult {
                run: r,
                seed: s,
                metrics,
                top_features: top_k(&m.schema.columns, &imp, config.top_k),
            },
            imp,
        ))
    })?;
    let mut mean_imp = vec![0.0; m.width()];
    for (_, imp) in &runs {
        for (a, v) in mean_imp.iter_mut().zip(imp) {
            *a += v / runs.len() as f64;
        }
    }
    let runs: Vec<RunResult> = runs.into_iter().map(|(r, _)| r).collect();
    let col = |f: fn(&MetricSet) -> f64| runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>();
    Ok(RepeatedEval {
        aggregate: Aggregate {
            accuracy: Summary::of(&col(|m| m.accuracy)),
            auc: Summary::of(&col(|m| m.auc)),
            f1: Summary::of(&col(|m| m.f1)),
        },
        importances: m.schema.columns.iter().cloned().zip(mean_imp).collect(),
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationConfig {
    Baseline,
    BaselineDomainSentences,
    BaselineClinicalSentiment,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 3] = [
        AblationConfig::Baseline,
        AblationConfig::BaselineDomainSentences,
        AblationConfig::BaselineClinicalSentiment,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationConfig::Baseline => "Baseline",
            AblationConfig::BaselineDomainSentences => "Baseline+Domain Sentences",
            AblationConfig::BaselineClinicalSentiment => "Baseline+Clinical Sentiment",
        }
    }

    /// Column indices of this configuration, in schema order.
    pub fn columns(self, m: &FeatureMatrix) -> Vec<usize> {
        m.schema
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let sent = c.starts_with(SENTENCE_PREFIX);
                let senti = c.starts_with(SENTIMENT_PREFIX);
                match self {
                    AblationConfig::Baseline => !sent && !senti,
                    AblationConfig::BaselineDomainSentences => !senti,
                    AblationConfig::BaselineClinicalSentiment => !sent,
                }
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub label: String,
    pub n_columns: usize,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// `(F1_best - F1_baseline) / F1_baseline` over the two augmented sets.
    pub improvement: f64,
}

pub fn relative_improvement(best: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (best - base) / base
    }
}

/// Repeated evaluation of each configuration over identical split seeds.
pub fn ablation(
    m: &FeatureMatrix,
    spec: &ModelSpec,
    config: &EvalConfig,
    workers: usize,
) -> Result<(AblationTable, Vec<RepeatedEval>)> {
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    for cfg in AblationConfig::ALL {
        let cols = cfg.columns(m);
        let sub = m.select_columns(&cols);
        let ev = repeated_eval(&sub, spec, config, workers)?;
        rows.push(AblationRow {
            config: cfg,
            label: cfg.label().into(),
            n_columns: cols.len(),
            aggregate: ev.aggregate,
        });
        evals.push(ev);
    }
    let base = rows[0].aggregate.f1.mean;
    let best = rows[1..].iter().map(|r| r.aggregate.f1.mean).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        AblationTable {
            improvement: relative_improvement(best, base),
            rows,
        },
        evals,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeRepeat {
    pub repeat: usize,
    pub seed: u64,
    /// Columns in the order they were dropped.
    pub elimination_order: Vec<String>,
    /// Mean CV F1 per width, widest first.
    pub scores: Vec<(usize, f64)>,
    pub best_width: usize,
    pub best_score: f64,
    pub best_set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeOutcome {
    pub columns: Vec<String>,
    pub repeats: Vec<RfeRepeat>,
    pub best_repeat: usize,
    pub best_set: Vec<String>,
    pub best_score: f64,
}

fn rfe_repeat(m: &FeatureMatrix, spec: &ModelSpec, config: &RfeConfig, r: usize) -> Result<RfeRepeat> {
    let s = run_seed(config.master_seed, r);
    let folds = stratified_folds(&m.labels, config.folds, s)?;
    let model_spec = spec.clone().with_seed(seed::derive(s, 1));
    let mut active: Vec<usize> = (0..m.width()).collect();
    let mut order = Vec::new();
    let mut scores = Vec::new();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    loop {
        let sub = m.select_columns(&active);
        let mut f1s = Vec::with_capacity(config.folds);
        let mut imp = vec![0.0; active.len()];
        for k in 0..config.folds {
            let train: Vec<usize> = (0..m.n_rows()).filter(|&i| folds[i] != k).collect();
            let test: Vec<usize> = (0..m.n_rows()).filter(|&i| folds[i] == k).collect();
            let (p, v) = fit_and_score(&sub, &train, &test, &model_spec, config.importance, seed::derive(s, 2 + k as u64))?;
            let y: Vec<bool> = test.iter().map(|&i| m.labels[i]).collect();
            let pred: Vec<bool> = p.iter().map(|&x| x >= 0.5).collect();
            f1s.push(f1_score(&y, &pred));
            for (a, b) in imp.iter_mut().zip(v) {
                *a += b / config.folds as f64;
            }
        }
        scores.push((active.len(), f1s.iter().sum::<f64>() / f1s.len() as f64));
        sets.push(active.clone());
        if active.len() == 1 {
            break;
        }
        // Lowest mean importance goes; earliest schema position breaks ties.
        let drop = (0..active.len())
            .min_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(a.cmp(&b)))
            .expect("non-empty");
        order.push(m.schema.columns[active[drop]].clone());
        active.remove(drop);
    }
    // Ties favour the smaller set, i.e. the later step.
    let best = (0..scores.len())
        .max_by(|&a, &b| scores[a].1.total_cmp(&scores[b].1).then(a.cmp(&b)))
        .expect("non-empty");
    Ok(RfeRepeat {
        repeat: r,
        seed: s,
        elimination_order: order,
        best_width: scores[best].0,
        best_score: scores[best].1,
        best_set: sets[best].iter().map(|&c| m.schema.columns[c].clone()).collect(),
        scores,
    })
}

/// Cross-validated recursive feature elimination, one column per step.
pub fn rfe(m: &FeatureMatrix, spec: &ModelSpec, config: &RfeConfig, workers: usize) -> Result<RfeOutcome> {
    spec.validate()?;
    if m.width() < 2 {
        return Err(Error::Invalid("recursive elimination needs at least 2 columns".into()));
    }
    if config.folds < 2 || config.repeats == 0 {
        return Err(Error::config("folds", "need folds >= 2 and repeats >= 1"));
    }
    let repeats = seed::try_par_map(workers, config.repeats, |r| rfe_repeat(m, spec, config, r))?;
    // Highest best score wins; the earlier repeat breaks ties.
    let best = (0..repeats.len())
        .max_by(|&a, &b| repeats[a].best_score.total_cmp(&repeats[b].best_score).then(b.cmp(&a)))
        .expect("non-empty");
    Ok(RfeOutcome {
        columns: m.schema.columns.clone(),
        best_repeat: best,
        best_set: repeats[best].best_set.clone(),
        best_score: repeats[best].best_score,
        repeats,
    })
}

/// Columns left out of the best set by at least two of three outcomes.
///
/// A column counts as eliminated in an outcome if that outcome's schema
/// has it and its best set does not. Because a best set maximizes CV F1,
/// every such removal kept the best score.
pub fn consensus_elimination(outcomes: &[RfeOutcome; 3]) -> Result<BTreeSet<String>> {
    let sets: Vec<BTreeSet<&String>> = outcomes.iter().map(|o| o.columns.iter().collect()).collect();
    let shared: BTreeSet<&String> = sets[0].iter().filter(|c| sets[1].contains(*c) && sets[2].contains(*c)).copied().collect();
    if shared.is_empty() {
        return Err(Error::Schema("the three outcomes share no columns".into()));
    }
    for o in outcomes {
        if let Some(c) = o.best_set.iter().find(|c| !o.columns.contains(c)) {
            return Err(Error::Schema(format!("best set column `{c}` is not in its outcome's schema")));
        }
    }
    let mut count: BTreeMap<&String, usize> = BTreeMap::new();
    for o in outcomes {
        let best: BTreeSet<&String> = o.best_set.iter().collect();
        for c in &o.columns {
            if !best.contains(c) {
                *count.entry(c).or_default() += 1;
            }
        }
    }
    Ok(count.into_iter().filter(|(_, n)| *n >= 2).map(|(c, _)| c.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Single,
    Ablation,
    Rfe,
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub config: BTreeMap<String, String>,
    pub n_rows: usize,
    pub n_columns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single: Option<RepeatedEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation_runs: Vec<RepeatedEval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rfe: Vec<(String, RfeOutcome)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<Vec<String>>,
}

impl EvalReport {
    pub fn new(kind: ReportKind, config: &ProtocolConfig, m: &FeatureMatrix) -> Self {
        EvalReport {
            kind,
            config: config.to_kv().to_map(),
            n_rows: m.n_rows(),
            n_columns: m.width(),
            single: None,
            ablation: None,
            ablation_runs: Vec::new(),
            rfe: Vec::new(),
            consensus: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Plain-text table: one row per configuration, ascending by F1.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let model = self.config.get("model.kind").map(String::as_str).unwrap_or("?");
        let _ = writeln!(out, "model: {model}  rows: {}  columns: {}", self.n_rows, self.n_columns);
        let header = |out: &mut String| {
            let _ = writeln!(out, "{:<32} {:>14} {:>14} {:>14}", "Configuration", "Acc", "AUC", "F1");
        };
        let row = |out: &mut String, name: &str, a: &Aggregate| {
            let cell = |s: Summary| format!("{:.3} ± {:.3}", s.mean, s.std);
            let _ = writeln!(out, "{:<32} {:>14} {:>14} {:>14}", name, cell(a.accuracy), cell(a.auc), cell(a.f1));
        };
        if let Some(s) = &self.single {
            header(&mut out);
            row(&mut out, "All features", &s.aggregate);
            let mut top: Vec<_> = s.importances.iter().collect();
            top.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
            let _ = writeln!(out, "\ntop features by mean importance:");
            for (name, v) in top.into_iter().take(10) {
                let _ = writeln!(out, "  {name:<40} {v:.4}");
            }
        }
        if let Some(t) = &self.ablation {
            header(&mut out);
            let mut rows: Vec<&AblationRow> = t.rows.iter().collect();
            rows.sort_by(|a, b| a.aggregate.f1.mean.total_cmp(&b.aggregate.f1.mean));
            for r in rows {
                row(&mut out, &r.label, &r.aggregate);
            }
            let _ = writeln!(out, "\nF1 improvement of best configuration over Baseline: {:.1}%", 100.0 * t.improvement);
        }
        for (name, o) in &self.rfe {
            let _ = writeln!(
                out,
                "\nRFE [{name}]: best CV F1 {:.3} with {} of {} columns (repeat {})",
                o.best_score,
                o.best_set.len(),
                o.columns.len(),
                o.best_repeat
            );
        }
        if let Some(c) = &self.consensus {
            let _ = writeln!(out, "\nconsensus-eliminated feature values ({}):", c.len());
            for name in c {
                let _ = writeln!(out, "  {name}");
            }
        }
        out
    }
}
