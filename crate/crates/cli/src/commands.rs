use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process;
use std::time::Duration;

use branchpred::corpus::corpus_stats;
use branchpred::eval::{
    compute_metrics, permutation_importance, roc_curve, split_by_conversation, transfer_eval, EvalError, MetricsReport,
    SplitSpec,
};
use branchpred::features::extract_corpus_features;
use branchpred::model::{random_baseline, BranchClassifier, ClassifierConfig, ModelError, TrainConfig};
use branchpred::pipeline::{
    derive_seed, load_corpus, run_experiment, write_importance_csv, write_roc_csv, ExperimentManifest, FailureKind,
    PipelineError, BASELINE_STREAM, IMPORTANCE_STREAM, MODEL_STREAM, PAIR_STREAM, SPLIT_STREAM,
};
use branchpred::scorer::lexical::tokenize;
use branchpred::scorer::protocol::{run_conformance, serve};
use branchpred::scorer::{
    build_pair_dataset, read_pairs, train_lexical_scorer, write_pairs, CacheScorer, ExternalScorer, LexicalHyper,
    LexicalScorer, LexicalScorerModel, ProtocolClient, RecordingScorer, ReplyScorer, ScoreCache,
};
use branchpred::synth::{generate, SynthConfig};
use branchpred::{parse_corpus, Corpus, FeatureMatrix, FilterConfig, FEATURE_NAMES};
use serde_json::{json, Value};

use crate::SplitArgs;

const LEXICAL_CACHE_NAME: &str = "lexical-v1";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }

    fn data(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn stage(message: impl Display) -> Self {
        Self { code: 3, message: message.to_string() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e.kind {
            FailureKind::Data => Self::data(e),
            FailureKind::Stage => Self::stage(e),
        }
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::SingleClass | ModelError::EmptySplit | ModelError::LabelCount | ModelError::Dimension { .. } => {
            CliError::data(e)
        }
        ModelError::Config(_) => CliError::usage(e),
        other => CliError::stage(other),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Model(m) => model_err(m),
        EvalError::Repetitions | EvalError::SplitConfig(_) => CliError::usage(e),
        EvalError::NanScore => CliError::stage(e),
        other => CliError::data(other),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::stage(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::stage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(CliError::stage)?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(CliError::stage)
}

fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CliError> {
    let mut out = create(path)?;
    corpus.write_jsonl(&mut out).and_then(|_| out.flush()).map_err(CliError::stage)
}

fn read_features(path: &Path) -> Result<FeatureMatrix, CliError> {
    FeatureMatrix::read_csv(open(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<BranchClassifier, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    BranchClassifier::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_cache(path: &Path) -> Result<ScoreCache, CliError> {
    ScoreCache::read_jsonl(open(path)?, "cache").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn ingest(inputs: &[PathBuf], out: &Path, stats: Option<&Path>, filter: &FilterConfig) -> Result<(), CliError> {
    let mut raw = Vec::new();
    for path in inputs {
        open(path)?
            .read_to_end(&mut raw)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if !raw.ends_with(b"\n") {
            raw.push(b'\n');
        }
    }
    let outcome = parse_corpus(raw.as_slice(), filter).map_err(CliError::data)?;
    for r in &outcome.rejected {
        eprintln!("rejected conversation {}: {}", r.conversation_id, r.reason);
    }
    log::info!(
        "{} conversations kept, {} rejected, {} dropped, {} comments filtered",
        outcome.corpus.len(),
        outcome.rejected.len(),
        outcome.dropped.len(),
        outcome.removed_comments
    );
    if outcome.corpus.is_empty() {
        return Err(CliError::data(format!(
            "no conversation survived ingestion ({} rejected, {} dropped)",
            outcome.rejected.len(),
            outcome.dropped.len()
        )));
    }
    write_corpus(out, &outcome.corpus)?;
    let report = corpus_stats(&outcome.corpus).map_err(CliError::data)?;
    print!("{}", report.render_table());
    if let Some(path) = stats {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn synth(config: &SynthConfig, out: &Path, metadata: Option<&Path>) -> Result<(), CliError> {
    let corpus = generate(config).map_err(CliError::usage)?;
    let mut w = create(out)?;
    corpus.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(CliError::stage)?;
    let meta_path = match metadata {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(format!("{}.meta.json", out.display())),
    };
    write_json(&meta_path, &corpus.metadata)?;
    println!(
        "{} conversations, {} comments, {} branch instances, positive rate {:.3}",
        config.trees, corpus.metadata.comments, corpus.metadata.instances, corpus.metadata.positive_rate
    );
    Ok(())
}

pub fn pairs(
    corpus: &Path,
    out_dir: &Path,
    seed: u64,
    negative_ratio: f64,
    split: &SplitArgs,
    filter: &FilterConfig,
) -> Result<(), CliError> {
    let corpus = load_corpus(corpus, filter)?;
    let spec = SplitSpec {
        test_fraction: split.test_fraction,
        val_fraction: split.val_fraction,
        seed: derive_seed(seed, SPLIT_STREAM),
    };
    let parts = split_by_conversation(&corpus, &spec).map_err(eval_err)?;
    for (name, c) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        write_corpus(&out_dir.join(format!("{name}.jsonl")), c)?;
    }
    let pairs = build_pair_dataset(&parts.train, negative_ratio, derive_seed(seed, PAIR_STREAM)).map_err(CliError::data)?;
    let mut w = create(&out_dir.join("pairs.jsonl"))?;
    write_pairs(&pairs, &mut w).and_then(|_| w.flush()).map_err(CliError::stage)?;
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    println!(
        "split {} conversations into {}/{}/{}; {} pairs ({} reply edges)",
        corpus.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len(),
        pairs.len(),
        positives
    );
    Ok(())
}

pub fn train_scorer(pairs: &Path, out: &Path, hyper: &LexicalHyper) -> Result<(), CliError> {
    let pairs = read_pairs(open(pairs)?).map_err(CliError::data)?;
    let (model, report) = train_lexical_scorer(&pairs, hyper).map_err(CliError::data)?;
    write_json(out, &model)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(CliError::stage)?);
    Ok(())
}

pub fn score(
    corpora: &[PathBuf],
    out: &Path,
    scorer: Option<&Path>,
    command: &[String],
    timeout_secs: u64,
    relaxation: Option<usize>,
    filter: &FilterConfig,
) -> Result<(), CliError> {
    let corpora = corpora
        .iter()
        .map(|p| load_corpus(p, filter))
        .collect::<Result<Vec<_>, _>>()?;
    let record = |scorer: &mut dyn ReplyScorer| -> Result<(), CliError> {
        for c in &corpora {
            extract_corpus_features(c, scorer, relaxation).map_err(CliError::stage)?;
        }
        Ok(())
    };
    let cache = match scorer {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let model: LexicalScorerModel =
                serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let mut cache = ScoreCache::new(LEXICAL_CACHE_NAME);
            record(&mut RecordingScorer::new(LexicalScorer::new(&model), &mut cache))?;
            cache
        }
        None => {
            let client = spawn_sidecar(command, timeout_secs)?;
            let mut cache = ScoreCache::new(client.scorer_name());
            let mut scorer = ExternalScorer::new(client, &mut cache);
            let result = record(&mut scorer);
            let shutdown = scorer.into_client().shutdown();
            result?;
            shutdown.map_err(CliError::stage)?;
            cache
        }
    };
    let mut w = create(out)?;
    cache.write_jsonl(&mut w).map_err(CliError::stage)?;
    w.flush().map_err(CliError::stage)?;
    println!("{} pair scores from {}", cache.len(), cache.scorer());
    Ok(())
}

fn spawn_sidecar(command: &[String], timeout_secs: u64) -> Result<ProtocolClient, CliError> {
    let (program, args) = command.split_first().ok_or_else(|| CliError::usage("no sidecar command given"))?;
    let mut cmd = process::Command::new(program);
    cmd.args(args);
    ProtocolClient::spawn(&mut cmd, Duration::from_secs(timeout_secs)).map_err(CliError::stage)
}

pub fn features(
    corpus: &Path,
    scores: &Path,
    out: &Path,
    relaxation: Option<usize>,
    filter: &FilterConfig,
) -> Result<(), CliError> {
    let corpus = load_corpus(corpus, filter)?;
    let cache = read_cache(scores)?;
    let m = extract_corpus_features(&corpus, &mut CacheScorer::new(&cache), relaxation).map_err(CliError::data)?;
    if m.is_empty() {
        return Err(CliError::data("corpus has no branch instances"));
    }
    m.write_csv(create(out)?).map_err(CliError::stage)?;
    let positives = m.labels().iter().filter(|&&y| y == 1).count();
    println!("{} instances ({} branching) from {} conversations", m.len(), positives, corpus.len());
    Ok(())
}

pub fn train(
    train: &Path,
    val: &Path,
    out: &Path,
    history: Option<&Path>,
    classifier: &ClassifierConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(), CliError> {
    let train_m = read_features(train)?;
    let val_m = read_features(val)?;
    let (clf, hist) =
        BranchClassifier::fit(&train_m, &val_m, classifier, train_config, derive_seed(seed, MODEL_STREAM)).map_err(model_err)?;
    let mut w = create(out)?;
    w.write_all(clf.to_json().as_bytes()).and_then(|_| w.flush()).map_err(CliError::stage)?;
    if let Some(path) = history {
        write_json(path, &hist)?;
    }
    println!(
        "trained {} epochs, best validation loss {:.5} at epoch {}",
        hist.val_loss.len(),
        hist.val_loss[hist.best_epoch - 1],
        hist.best_epoch
    );
    Ok(())
}

fn metrics_for(clf: &BranchClassifier, m: &FeatureMatrix, threshold: f64) -> Result<(Vec<f64>, MetricsReport), CliError> {
    if clf.feature_names.iter().map(String::as_str).ne(FEATURE_NAMES) {
        return Err(CliError::data("feature columns do not match the model"));
    }
    let scores = clf.predict_matrix(m).map_err(model_err)?;
    let report = compute_metrics(&scores, &m.labels(), threshold).map_err(eval_err)?;
    Ok((scores, report))
}

pub fn eval(
    model: &Path,
    features: &Path,
    seed: u64,
    threshold: f64,
    out: Option<&Path>,
    roc: Option<&Path>,
) -> Result<(), CliError> {
    let clf = read_model(model)?;
    let m = read_features(features)?;
    let (scores, test) = metrics_for(&clf, &m, threshold)?;
    let labels = m.labels();
    let baseline = compute_metrics(&random_baseline(labels.len(), derive_seed(seed, BASELINE_STREAM)), &labels, threshold)
        .map_err(eval_err)?;
    print!("{}", test.render_table("Model"));
    print!("{}", baseline.render_table("Random").lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
    if let Some(path) = out {
        write_json(path, &json!({ "test": test, "random_baseline": baseline }))?;
    }
    if let Some(path) = roc {
        write_roc_csv(path, &roc_curve(&scores, &labels).map_err(eval_err)?)?;
    }
    Ok(())
}

/// Accepts a bare metrics report or any file with one under `test`.
fn read_in_domain(path: &Path) -> Result<MetricsReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let report = match v.get("test") {
        Some(t) => t.clone(),
        None => v,
    };
    serde_json::from_value(report).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn transfer(
    model: &Path,
    features: &Path,
    in_domain: Option<&Path>,
    threshold: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let clf = read_model(model)?;
    let m = read_features(features)?;
    let reference = in_domain.map(read_in_domain).transpose()?;
    let report = transfer_eval(&clf, &m, reference.as_ref(), threshold).map_err(eval_err)?;
    print!("{}", report.metrics.render_table("Transfer"));
    if let (Some(f1), Some(auc)) = (report.f1_degradation_pct, report.auc_degradation_pct) {
        println!("degradation: F1 {f1:.1}%, AUC {auc:.1}%");
    }
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn importance(
    model: &Path,
    features: &Path,
    seed: u64,
    repetitions: usize,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let clf = read_model(model)?;
    let m = read_features(features)?;
    metrics_for(&clf, &m, 0.5)?;
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let report = permutation_importance(
        |row| clf.predict(row).expect("row width checked"),
        &m.rows,
        &m.labels(),
        &names,
        repetitions,
        derive_seed(seed, IMPORTANCE_STREAM),
    )
    .map_err(eval_err)?;
    print!("{}", report.render_table());
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    if let Some(path) = csv {
        write_importance_csv(path, &report)?;
    }
    Ok(())
}

pub fn run(manifest_path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<(), CliError> {
    let mut manifest = ExperimentManifest::load(manifest_path)?;
    match seed {
        Some(s) => manifest.seed = s,
        None => {
            let raw: Value = fs::read_to_string(manifest_path)
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok())
                .unwrap_or(Value::Null);
            if raw.get("seed").is_none() {
                return Err(CliError::usage("the manifest has no seed; pass --seed"));
            }
        }
    }
    if let Some(dir) = output_dir {
        manifest.output_dir = dir;
    }
    let summary = run_experiment(&manifest)?;
    let m = &summary.metrics;
    print!("{}", m.test.render_table("Model"));
    print!("{}", m.random_baseline.render_table("Random").lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
    if let Some(t) = &m.transfer {
        print!("{}", t.metrics.render_table("Transfer").lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
    }
    println!("outputs in {}", summary.output_dir.display());
    Ok(())
}

pub fn check_sidecar(command: &[String], timeout_secs: u64) -> Result<(), CliError> {
    let mut client = spawn_sidecar(command, timeout_secs)?;
    let checks = run_conformance(&mut client);
    let _ = client.shutdown();
    let mut failed = 0;
    for c in &checks {
        if c.passed {
            println!("PASS {}", c.name);
        } else {
            failed += 1;
            println!("FAIL {}: {}", c.name, c.detail);
        }
    }
    if failed > 0 {
        return Err(CliError::stage(format!("{failed} of {} conformance checks failed", checks.len())));
    }
    Ok(())
}

fn overlap(text_a: &str, text_b: &str) -> f64 {
    let a: BTreeSet<String> = tokenize(text_a).into_iter().collect();
    let b: BTreeSet<String> = tokenize(text_b).into_iter().collect();
    if b.is_empty() {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / b.len() as f64
}

pub fn stub_sidecar(name: &str, constant: Option<f64>) -> Result<(), CliError> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let result = match constant {
        Some(c) => serve(stdin.lock(), stdout.lock(), name, |_, _| c),
        None => serve(stdin.lock(), stdout.lock(), name, overlap),
    };
    result.map_err(CliError::stage)
}
