//! End-to-end experiment runs driven by a JSON manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_corpus, Corpus, FilterConfig};
use crate::eval::{
    compute_metrics, permutation_importance, roc_curve, split_by_conversation, transfer_eval, EvalError,
    ImportanceReport, MetricsReport, RocPoint, SplitSpec, TransferReport,
};
use crate::features::{extract_corpus_features, FeatureError, FeatureMatrix, FEATURE_NAMES};
use crate::model::{random_baseline, BranchClassifier, ClassifierConfig, TrainConfig, TrainHistory};
use crate::scorer::{
    build_pair_dataset, train_lexical_scorer, write_pairs, CacheScorer, ExternalScorer, LexicalHyper,
    LexicalScorer, ProtocolClient, RecordingScorer, ReplyScorer, ScoreCache, ScorerTrainReport,
};

/// Marker file left in an output directory whose run did not finish.
pub const STALE_MARKER: &str = ".stale";

/// Whether a failure is the input's fault or the run's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Data,
    Stage,
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn data(stage: &'static str, message: impl ToString) -> Self {
        Self {
            stage,
            kind: FailureKind::Data,
            message: message.to_string(),
        }
    }

    pub fn stage(stage: &'static str, message: impl ToString) -> Self {
        Self {
            stage,
            kind: FailureKind::Stage,
            message: message.to_string(),
        }
    }
}

/// How reply-to scores are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScorerSpec {
    /// Train the built-in lexical scorer on the training split's pairs.
    Lexical {
        #[serde(default = "default_negative_ratio")]
        negative_ratio: f64,
        #[serde(default)]
        hyper: LexicalHyper,
    },
    /// Read every score from a cache file.
    Cache { path: PathBuf },
    /// Spawn a protocol-speaking scorer process.
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_negative_ratio() -> f64 {
    1.0
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_relaxation() -> Option<usize> {
    Some(15)
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::Lexical {
            negative_ratio: default_negative_ratio(),
            hyper: LexicalHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentManifest {
    pub corpus: PathBuf,
    /// Second corpus for transfer evaluation.
    pub transfer_corpus: Option<PathBuf>,
    pub filter: FilterConfig,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub scorer: ScorerSpec,
    /// Most recent leaves whose paths are scored; `null` scores everything.
    #[serde(default = "default_relaxation")]
    pub relaxation: Option<usize>,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub threshold: f64,
    pub importance_repetitions: usize,
    /// Shuffle labels within every split (a control run).
    pub shuffle_labels: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            transfer_corpus: None,
            filter: FilterConfig::default(),
            test_fraction: 0.20,
            val_fraction: 0.05,
            scorer: ScorerSpec::default(),
            relaxation: default_relaxation(),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            threshold: 0.5,
            importance_repetitions: 5,
            shuffle_labels: false,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

// Offsets that give each stage its own generator.
pub const SPLIT_STREAM: u64 = 0;
pub const PAIR_STREAM: u64 = 1;
pub const SCORER_STREAM: u64 = 2;
pub const MODEL_STREAM: u64 = 3;
pub const IMPORTANCE_STREAM: u64 = 4;
pub const SHUFFLE_STREAM: u64 = 5;
pub const BASELINE_STREAM: u64 = 6;

/// Seed of one stage, derived from the global seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(16).wrapping_add(stream)
}

impl ExperimentManifest {
    /// Read a manifest, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::data("manifest", format!("{}: {e}", path.display())))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| PipelineError::data("manifest", e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.corpus);
        resolve(&mut m.output_dir);
        if let Some(p) = m.transfer_corpus.as_mut() {
            resolve(p);
        }
        if let ScorerSpec::Cache { path } = &mut m.scorer {
            resolve(path);
        }
        Ok(m)
    }

    pub fn derived_seed(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            val_fraction: self.val_fraction,
            seed: self.derived_seed(SPLIT_STREAM),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let missing = |p: &Path| PipelineError::data("manifest", format!("{} does not exist", p.display()));
        if !self.corpus.is_file() {
            return Err(missing(&self.corpus));
        }
        if let Some(p) = &self.transfer_corpus {
            if !p.is_file() {
                return Err(missing(p));
            }
        }
        if let ScorerSpec::Cache { path } = &self.scorer {
            if !path.is_file() {
                return Err(missing(path));
            }
        }
        if let ScorerSpec::External { command, .. } = &self.scorer {
            if command.is_empty() {
                return Err(PipelineError::data("manifest", "external scorer command is empty"));
            }
        }
        if self.relaxation == Some(0) {
            return Err(PipelineError::data("manifest", "relaxation must be positive or null"));
        }
        if self.importance_repetitions == 0 {
            return Err(PipelineError::data("manifest", "importance_repetitions must be at least 1"));
        }
        Ok(())
    }
}

/// The content of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub test: MetricsReport,
    pub random_baseline: MetricsReport,
    pub transfer: Option<TransferReport>,
    pub scorer: String,
    pub scorer_report: Option<ScorerTrainReport>,
    pub instances: SplitCounts,
    pub conversations: SplitCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: RunMetrics,
    pub importance: ImportanceReport,
    pub history: TrainHistory,
    pub output_dir: PathBuf,
}

pub fn load_corpus(path: &Path, filter: &FilterConfig) -> Result<Corpus, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data("ingest", format!("{}: {e}", path.display())))?;
    let outcome = parse_corpus(BufReader::new(file), filter).map_err(|e| PipelineError::data("ingest", e))?;
    for r in &outcome.rejected {
        log::warn!("rejected conversation {}: {}", r.conversation_id, r.reason);
    }
    if outcome.corpus.is_empty() {
        return Err(PipelineError::data(
            "ingest",
            format!("{}: no conversation survived validation and filtering", path.display()),
        ));
    }
    Ok(outcome.corpus)
}

fn create(path: &Path, stage: &'static str) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: &'static str) -> Result<(), PipelineError> {
    let mut out = create(path, stage)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| PipelineError::stage(stage, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| PipelineError::stage(stage, e))
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(path, "eval")?);
    let err = |e: csv::Error| PipelineError::stage("eval", e);
    w.write_record(["threshold", "fpr", "tpr"]).map_err(err)?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::stage("eval", e))
}

pub fn write_importance_csv(path: &Path, report: &ImportanceReport) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(path, "importance")?);
    let err = |e: csv::Error| PipelineError::stage("importance", e);
    w.write_record(["rank", "feature", "importance", "std"]).map_err(err)?;
    for f in report.ranked() {
        w.write_record([f.rank.to_string(), f.name.clone(), f.importance.to_string(), f.std.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::stage("importance", e))
}

fn write_features(path: &Path, m: &FeatureMatrix) -> Result<(), PipelineError> {
    m.write_csv(create(path, "features")?)
        .map_err(|e| PipelineError::stage("features", e))
}

/// Feature matrices of all splits (and the transfer corpus) under one scorer.
fn extract_all<S: ReplyScorer>(
    scorer: &mut S,
    corpora: &[&Corpus],
    relaxation: Option<usize>,
) -> Result<Vec<FeatureMatrix>, FeatureError> {
    corpora
        .iter()
        .map(|c| extract_corpus_features(c, scorer, relaxation))
        .collect()
}

fn eval_err(stage: &'static str) -> impl Fn(EvalError) -> PipelineError {
    move |e| match e {
        EvalError::SingleClass { .. } | EvalError::TooFewConversations(_) => PipelineError::data(stage, e),
        other => PipelineError::stage(stage, other),
    }
}

/// Run every stage. On failure a stale marker naming the stage is left in
/// the output directory.
pub fn run_experiment(manifest: &ExperimentManifest) -> Result<RunSummary, PipelineError> {
    fs::create_dir_all(&manifest.output_dir)
        .map_err(|e| PipelineError::stage("setup", format!("{}: {e}", manifest.output_dir.display())))?;
    let marker = manifest.output_dir.join(STALE_MARKER);
    match run_stages(manifest) {
        Ok(summary) => {
            if marker.exists() {
                let _ = fs::remove_file(&marker);
            }
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_stages(manifest: &ExperimentManifest) -> Result<RunSummary, PipelineError> {
    manifest.validate()?;
    let out = &manifest.output_dir;
    write_json(&out.join("manifest.json"), manifest, "setup")?;

    let corpus = load_corpus(&manifest.corpus, &manifest.filter)?;
    let transfer_corpus = match &manifest.transfer_corpus {
        Some(p) => Some(load_corpus(p, &manifest.filter)?),
        None => None,
    };
    let split = split_by_conversation(&corpus, &manifest.split_spec()).map_err(eval_err("split"))?;
    log::info!(
        "split {} conversations into {}/{}/{}",
        corpus.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let mut corpora = vec![&split.train, &split.val, &split.test];
    if let Some(t) = &transfer_corpus {
        corpora.push(t);
    }
    let (scorer_name, scorer_report, mut matrices) = match &manifest.scorer {
        ScorerSpec::Lexical { negative_ratio, hyper } => {
            let pairs = build_pair_dataset(&split.train, *negative_ratio, manifest.derived_seed(PAIR_STREAM))
                .map_err(|e| PipelineError::data("pairs", e))?;
            write_pairs(&pairs, create(&out.join("pairs.jsonl"), "pairs")?)
                .map_err(|e| PipelineError::stage("pairs", e))?;
            let hyper = LexicalHyper {
                seed: manifest.derived_seed(SCORER_STREAM),
                ..hyper.clone()
            };
            let (model, report) =
                train_lexical_scorer(&pairs, &hyper).map_err(|e| PipelineError::data("train-scorer", e))?;
            write_json(&out.join("scorer.json"), &model, "train-scorer")?;
            let mut cache = ScoreCache::new("lexical-v1");
            let mut scorer = RecordingScorer::new(LexicalScorer::new(&model), &mut cache);
            let name = scorer.name();
            let m = extract_all(&mut scorer, &corpora, manifest.relaxation)
                .map_err(|e| PipelineError::stage("features", e))?;
            cache
                .write_jsonl(create(&out.join("scores.jsonl"), "score")?)
                .map_err(|e| PipelineError::stage("score", e))?;
            (name, Some(report), m)
        }
        ScorerSpec::Cache { path } => {
            let file = File::open(path).map_err(|e| PipelineError::data("score", format!("{}: {e}", path.display())))?;
            let cache = ScoreCache::read_jsonl(BufReader::new(file), "cache")
                .map_err(|e| PipelineError::data("score", e))?;
            let mut scorer = CacheScorer::new(&cache);
            let m = extract_all(&mut scorer, &corpora, manifest.relaxation)
                .map_err(|e| PipelineError::data("features", e))?;
            (cache.scorer().to_string(), None, m)
        }
        ScorerSpec::External { command, timeout_secs } => {
            let mut cmd = Command::new(&command[0]);
            cmd.args(&command[1..]);
            let client = ProtocolClient::spawn(&mut cmd, Duration::from_secs(*timeout_secs))
                .map_err(|e| PipelineError::stage("score", e))?;
            let mut cache = ScoreCache::new(client.scorer_name());
            let mut scorer = ExternalScorer::new(client, &mut cache);
            let name = scorer.name();
            let m = extract_all(&mut scorer, &corpora, manifest.relaxation);
            let shutdown = scorer.into_client().shutdown();
            let m = m.map_err(|e| PipelineError::stage("features", e))?;
            shutdown.map_err(|e| PipelineError::stage("score", e))?;
            cache
                .write_jsonl(create(&out.join("scores.jsonl"), "score")?)
                .map_err(|e| PipelineError::stage("score", e))?;
            (name, None, m)
        }
    };
    let transfer_m = if transfer_corpus.is_some() { matrices.pop() } else { None };
    let mut test_m = matrices.pop().expect("test matrix");
    let mut val_m = matrices.pop().expect("val matrix");
    let mut train_m = matrices.pop().expect("train matrix");
    for (name, m) in [("train", &train_m), ("val", &val_m), ("test", &test_m)] {
        if m.is_empty() {
            return Err(PipelineError::data("features", format!("{name} split has no branch instances")));
        }
        write_features(&out.join(format!("features_{name}.csv")), m)?;
    }
    if let Some(m) = &transfer_m {
        write_features(&out.join("features_transfer.csv"), m)?;
    }

    if manifest.shuffle_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(manifest.derived_seed(SHUFFLE_STREAM));
        for m in [&mut train_m, &mut val_m, &mut test_m] {
            let mut labels = m.labels();
            labels.shuffle(&mut rng);
            for (key, y) in m.keys.iter_mut().zip(labels) {
                key.label = y;
            }
        }
    }

    let (clf, history) = BranchClassifier::fit(
        &train_m,
        &val_m,
        &manifest.classifier,
        &manifest.train,
        manifest.derived_seed(MODEL_STREAM),
    )
    .map_err(|e| match e {
        crate::model::ModelError::SingleClass | crate::model::ModelError::EmptySplit => {
            PipelineError::data("train", e)
        }
        other => PipelineError::stage("train", other),
    })?;
    fs::write(out.join("model.json"), clf.to_json()).map_err(|e| PipelineError::stage("train", e))?;
    write_json(&out.join("history.json"), &history, "train")?;

    let scores = clf.predict_matrix(&test_m).map_err(|e| PipelineError::stage("eval", e))?;
    let labels = test_m.labels();
    let test = compute_metrics(&scores, &labels, manifest.threshold).map_err(eval_err("eval"))?;
    let baseline_scores = random_baseline(labels.len(), manifest.derived_seed(BASELINE_STREAM));
    let random = compute_metrics(&baseline_scores, &labels, manifest.threshold).map_err(eval_err("eval"))?;
    write_roc_csv(&out.join("roc.csv"), &roc_curve(&scores, &labels).map_err(eval_err("eval"))?)?;

    let transfer = match &transfer_m {
        Some(m) => Some(transfer_eval(&clf, m, Some(&test), manifest.threshold).map_err(eval_err("transfer"))?),
        None => None,
    };

    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let importance = permutation_importance(
        |row| clf.predict(row).expect("row width checked"),
        &test_m.rows,
        &labels,
        &names,
        manifest.importance_repetitions,
        manifest.derived_seed(IMPORTANCE_STREAM),
    )
    .map_err(eval_err("importance"))?;
    write_json(&out.join("importance.json"), &importance, "importance")?;
    write_importance_csv(&out.join("importance.csv"), &importance)?;

    let metrics = RunMetrics {
        test,
        random_baseline: random,
        transfer,
        scorer: scorer_name,
        scorer_report,
        instances: SplitCounts {
            train: train_m.len(),
            val: val_m.len(),
            test: test_m.len(),
        },
        conversations: SplitCounts {
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
        },
    };
    write_json(&out.join("metrics.json"), &metrics, "eval")?;
    Ok(RunSummary {
        metrics,
        importance,
        history,
        output_dir: out.clone(),
    })
}
