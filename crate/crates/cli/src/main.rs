//! `readmit`: file-to-file driver for the readmission pipeline.
//!
//! Every command writes a JSON run manifest next to its outputs. Exit codes:
//! 0 on success, 1 on I/O failure, 2 on configuration or validation errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use readmit::config::KvConfig;
use readmit::corpus::load_corpus;
use readmit::digest::sha256_file;
use readmit::domains::{self, Lexicon, NlpModels, RiskDomain};
use readmit::eval::{self, AblationConfig, EvalReport, ProtocolConfig, ReportKind};
use readmit::features::{ids_path, FeatureMatrix};
use readmit::pipeline::{self, ExtractConfig, NlpConfig};
use readmit::syngen::{self, GenConfig};
use readmit::{Error, Result};

#[derive(Parser)]
#[command(name = "readmit", version, about = "30-day psychiatric readmission risk pipeline")]
struct Cli {
    /// Upper bound on worker threads; never changes any output byte.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, sentiment seed set, ground truth and lexicon.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the topic model and the seven sentiment models.
    TrainNlp {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Labeled sentiment seed sentences (JSONL).
        #[arg(long)]
        seeds: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the admission feature matrix CSV.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory written by `train-nlp`.
        #[arg(long)]
        models: PathBuf,
        /// Defaults to the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol over a feature matrix.
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        #[arg(long)]
        features: PathBuf,
        /// Classifier spec file; its keys are read as `model.<key>`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a saved evaluation report as text.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print default configuration values.
    Defaults {
        #[arg(value_enum)]
        section: Option<Section>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Single,
    Ablation,
    Rfe,
    Consensus,
}

#[derive(Clone, Copy, ValueEnum)]
enum Section {
    Gen,
    Nlp,
    Extract,
    Protocol,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config: BTreeMap<String, String>,
    master_seed: u64,
    workers: usize,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    metrics: BTreeMap<String, f64>,
    timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, config: &KvConfig, master_seed: u64, workers: usize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config.to_map(),
            master_seed,
            workers,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings_ms.insert(stage.into(), t.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        write_file(path, s.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Config file (recorded as an input) overlaid with `--set` assignments.
fn load_config(args: &ConfigArgs, inputs: &mut Vec<PathBuf>) -> Result<KvConfig> {
    let mut kv = match &args.config {
        Some(p) => {
            inputs.push(p.clone());
            KvConfig::load(p)?
        }
        None => KvConfig::new(),
    };
    for a in &args.set {
        kv.apply_assignment(a)?;
    }
    Ok(kv)
}

fn cmd_gen(cfg: &ConfigArgs, out: &Path, workers: usize) -> Result<()> {
    let mut inputs = Vec::new();
    let kv = load_config(cfg, &mut inputs)?;
    let config = GenConfig::from_kv(&kv)?;
    let mut man = RunManifest::new("gen", &config.to_kv(), config.seed, workers);
    for p in &inputs {
        man.input(p)?;
    }
    let (corpus, truth) = man.time("generate", || syngen::generate_with_truth(&config, workers))?;
    let seeds = man.time("seed_set", || Ok(syngen::sentiment_seed_set(&config)))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = [
        ("corpus.jsonl", corpus.to_jsonl_string()),
        ("sentiment_seed.jsonl", domains::write_sentiment_seed(&seeds)),
        ("ground_truth.jsonl", truth.to_jsonl()),
        ("lexicon.json", Lexicon::default().to_json()),
    ];
    for (name, body) in &files {
        let p = out.join(name);
        write_file(&p, body.as_bytes())?;
        man.output(&p)?;
    }
    let n = corpus.n_admissions();
    let pos = truth.admissions.iter().filter(|a| a.label).count();
    man.metrics.insert("patients".into(), corpus.patients.len() as f64);
    man.metrics.insert("admissions".into(), n as f64);
    man.metrics.insert("readmission_rate".into(), pos as f64 / n.max(1) as f64);
    man.write(&out.join("manifest.json"))?;
    println!(
        "wrote {} patients, {} admissions ({:.1}% readmitted) to {}",
        corpus.patients.len(),
        n,
        100.0 * pos as f64 / n.max(1) as f64,
        out.display()
    );
    Ok(())
}

fn cmd_train_nlp(
    corpus_path: &Path,
    lexicon_path: &Path,
    seeds_path: &Path,
    cfg: &ConfigArgs,
    out: &Path,
    workers: usize,
) -> Result<()> {
    let mut inputs = vec![corpus_path.to_path_buf(), lexicon_path.to_path_buf(), seeds_path.to_path_buf()];
    let kv = load_config(cfg, &mut inputs)?;
    let config = NlpConfig::from_kv(&kv)?;
    let lexicon = Lexicon::load(lexicon_path)?;
    let seeds = domains::load_sentiment_seed(seeds_path)?;
    let corpus = load_corpus(corpus_path)?;
    let mut man = RunManifest::new("train-nlp", &config.to_kv(), config.seed, workers);
    for p in &inputs {
        man.input(p)?;
    }
    let trained = man.time("train", || pipeline::train_nlp(&corpus, &lexicon, &seeds, &config, workers))?;
    for p in pipeline::save_models(out, &trained.topic, &trained.sentiment)? {
        man.output(&p)?;
    }
    println!(
        "topic model: held-out micro-F1 {:.4} ({} train / {} held-out sentences)",
        trained.topic_micro_f1, trained.n_train_sentences, trained.n_heldout_sentences
    );
    man.metrics.insert("topic_micro_f1".into(), trained.topic_micro_f1);
    for d in RiskDomain::ALL {
        if let Some(acc) = trained.sentiment_accuracy.get(&d) {
            println!("sentiment [{}]: held-out accuracy {acc:.4}", d.name());
            man.metrics.insert(format!("sentiment_accuracy.{}", d.slug()), *acc);
        }
    }
    man.write(&out.join("manifest.json"))
}

fn cmd_extract(
    corpus_path: &Path,
    models: &Path,
    lexicon_path: Option<&Path>,
    cfg: &ConfigArgs,
    out: &Path,
    workers: usize,
) -> Result<()> {
    let mut inputs = vec![corpus_path.to_path_buf()];
    let kv = load_config(cfg, &mut inputs)?;
    let config = ExtractConfig::from_kv(&kv)?;
    let lexicon = match lexicon_path {
        Some(p) => {
            inputs.push(p.to_path_buf());
            Lexicon::load(p)?
        }
        None => Lexicon::default(),
    };
    let loaded = pipeline::load_models(models)?;
    inputs.push(models.join(pipeline::TOPIC_FILE));
    inputs.extend(RiskDomain::ALL.iter().map(|&d| models.join(pipeline::sentiment_file(d))));
    let corpus = load_corpus(corpus_path)?;
    let mut man = RunManifest::new("extract", &config.to_kv(), 0, workers);
    for p in &inputs {
        man.input(p)?;
    }
    let nlp = NlpModels {
        encoder: &loaded.encoder,
        lexicon: &lexicon,
        topic: Some(&loaded.topic),
        sentiment: &loaded.sentiment,
        tagging: config.tagging,
        averaging: config.averaging,
    };
    let m = man.time("extract", || pipeline::extract_matrix(&corpus, &nlp, workers))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    m.save_csv(out)?;
    man.output(out)?;
    man.output(&ids_path(out))?;
    man.metrics.insert("rows".into(), m.n_rows() as f64);
    man.metrics.insert("columns".into(), m.width() as f64);
    man.write(&sidecar(out, ".manifest.json"))?;
    println!("wrote {} rows x {} columns to {}", m.n_rows(), m.width(), out.display());
    Ok(())
}

fn cmd_eval(
    kind: EvalKind,
    features: &Path,
    model: Option<&Path>,
    cfg: &ConfigArgs,
    out: &Path,
    workers: usize,
) -> Result<()> {
    let mut inputs = vec![features.to_path_buf(), ids_path(features)];
    let mut kv = KvConfig::new();
    if let Some(p) = model {
        inputs.push(p.to_path_buf());
        for (k, v) in KvConfig::load(p)?.iter() {
            kv.set(&format!("model.{k}"), v);
        }
    }
    kv.merge(&load_config(cfg, &mut inputs)?);
    let pc = ProtocolConfig::from_kv(&kv)?;
    let m = FeatureMatrix::load_csv(features)?;
    let mut man = RunManifest::new("eval", &pc.to_kv(), pc.eval.master_seed, workers);
    for p in &inputs {
        man.input(p)?;
    }
    let report = man.time("evaluate", || run_protocol(kind, &m, &pc, workers))?;
    write_file(out, report.to_json().as_bytes())?;
    let text = report.render_text();
    let txt = out.with_extension("txt");
    write_file(&txt, text.as_bytes())?;
    man.output(out)?;
    man.output(&txt)?;
    man.write(&sidecar(out, ".manifest.json"))?;
    print!("{text}");
    Ok(())
}

fn run_protocol(kind: EvalKind, m: &FeatureMatrix, pc: &ProtocolConfig, workers: usize) -> Result<EvalReport> {
    let report_kind = match kind {
        EvalKind::Single => ReportKind::Single,
        EvalKind::Ablation => ReportKind::Ablation,
        EvalKind::Rfe => ReportKind::Rfe,
        EvalKind::Consensus => ReportKind::Consensus,
    };
    let mut report = EvalReport::new(report_kind, pc, m);
    match kind {
        EvalKind::Single => report.single = Some(eval::repeated_eval(m, &pc.model, &pc.eval, workers)?),
        EvalKind::Ablation => {
            let (table, runs) = eval::ablation(m, &pc.model, &pc.eval, workers)?;
            report.ablation = Some(table);
            report.ablation_runs = runs;
        }
        EvalKind::Rfe => report.rfe.push(("all".into(), eval::rfe(m, &pc.model, &pc.rfe, workers)?)),
        EvalKind::Consensus => {
            let mut outcomes = Vec::new();
            for cfg in AblationConfig::ALL {
                let sub = m.select_columns(&cfg.columns(m));
                let o = eval::rfe(&sub, &pc.model, &pc.rfe, workers)?;
                report.rfe.push((cfg.label().into(), o.clone()));
                outcomes.push(o);
            }
            let outcomes: [_; 3] = outcomes.try_into().expect("three ablation configurations");
            report.consensus = Some(eval::consensus_elimination(&outcomes)?.into_iter().collect());
        }
    }
    Ok(report)
}

fn cmd_report(input: &Path) -> Result<()> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    print!("{}", EvalReport::from_json(&text)?.render_text());
    Ok(())
}

fn cmd_defaults(section: Option<Section>) {
    let all = [Section::Gen, Section::Nlp, Section::Extract, Section::Protocol];
    let chosen: Vec<Section> = section.map_or(all.to_vec(), |s| vec![s]);
    for (i, s) in chosen.iter().enumerate() {
        let (title, kv) = match s {
            Section::Gen => ("gen", GenConfig::default().to_kv()),
            Section::Nlp => ("train-nlp", NlpConfig::default().to_kv()),
            Section::Extract => ("extract", ExtractConfig::default().to_kv()),
            Section::Protocol => ("eval", ProtocolConfig::default().to_kv()),
        };
        if chosen.len() > 1 {
            if i > 0 {
                println!();
            }
            println!("# {title}");
        }
        print!("{}", kv.render());
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers as usize;
    match &cli.command {
        Command::Gen { cfg, out } => cmd_gen(cfg, out, workers),
        Command::TrainNlp {
            corpus,
            lexicon,
            seeds,
            cfg,
            out,
        } => cmd_train_nlp(corpus, lexicon, seeds, cfg, out, workers),
        Command::Extract {
            corpus,
            models,
            lexicon,
            cfg,
            out,
        } => cmd_extract(corpus, models, lexicon.as_deref(), cfg, out, workers),
        Command::Eval {
            kind,
            features,
            model,
            cfg,
            out,
        } => cmd_eval(*kind, features, model.as_deref(), cfg, out, workers),
        Command::Report { input } => cmd_report(input),
        Command::Defaults { section } => {
            cmd_defaults(*section);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}
