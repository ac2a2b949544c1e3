//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use branchpred::eval::{compute_metrics, split_by_conversation, SplitSpec};
use branchpred::features::{pool, relaxation_window, FeatureMask};
use branchpred::model::{init_mlp, random_baseline, TrainConfig};
use branchpred::pipeline::{run_experiment, ExperimentManifest, RunSummary};
use branchpred::synth::{generate, SynthConfig};
use branchpred::{parse_corpus, ConversationTree, Corpus, FilterConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_parents(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<usize>> {
    let chainy = rng.gen::<f64>();
    std::iter::once(None)
        .chain((1..n).map(|i| {
            if rng.gen::<f64>() < chainy {
                Some(i - 1)
            } else {
                Some(rng.gen_range(0..i))
            }
        }))
        .collect()
}

fn depth(parents: &[Option<usize>], mut v: usize) -> usize {
    let mut d = 0;
    while let Some(p) = parents[v] {
        v = p;
        d += 1;
    }
    d
}

fn label_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut mismatches) = (0usize, 0usize);
    for t in 0..1000 {
        let n = rng.gen_range(3..=200);
        let parents = random_parents(&mut rng, n);
        let tree = ConversationTree::from_parent_indices(&format!("t{t}"), &parents);
        let mut expected = Vec::new();
        for j in 1..parents.len() {
            if depth(&parents, j) >= 2 {
                let p = parents[j].unwrap();
                expected.push((j, u8::from((1..j).any(|i| parents[i] == Some(p)))));
            }
        }
        let got: Vec<(usize, u8)> = tree.enumerate_instances().iter().map(|i| (i.node, i.label)).collect();
        checked += expected.len();
        if got != expected {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatching trees of 1000 ({checked} instances) in {secs:.2}s (limit 10s)"),
    )
}

fn brute_pool(xs: &[f64]) -> [f64; 10] {
    let n = xs.len();
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let top: Vec<f64> = s.iter().rev().take(3).copied().collect();
    let top_sum: f64 = top.iter().sum();
    [s[n - 1], s[0], mean, pct(0.5), top_sum, top_sum / top.len() as f64, std, pct(0.25), pct(0.75), pct(0.95)]
}

fn pooling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=60);
        // Repeated values exercise ties.
        let xs: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.5 } else { rng.gen::<f64>() })
            .collect();
        let got = pool(&xs).unwrap().to_array();
        for (g, w) in got.iter().zip(brute_pool(&xs)) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max abs error {worst:.3e} over 10000 multisets (limit 1e-9)"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let hidden = rng.gen_range(1..=24);
        let mut model = init_mlp(hidden, 0.2, draw).unwrap();
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = f64::from(rng.gen_bool(0.5) as u8);
        let analytic = model.gradient(&x, y);
        for (i, a) in analytic.iter().enumerate() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + step;
            let up = model.loss(&x, y, None);
            model.params_mut()[i] = orig - step;
            let down = model.loss(&x, y, None);
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.3e} over 100 draws (limit 1e-4)"))
}

fn random_baseline_auc() -> Outcome {
    let corpus = synth_corpus(&SynthConfig {
        trees: 1200,
        branching: 0.5,
        seed: 4,
        ..SynthConfig::default()
    });
    let labels: Vec<u8> = corpus.trees.iter().flat_map(|t| t.enumerate_instances()).map(|i| i.label).collect();
    let pos: Vec<u8> = labels.iter().copied().filter(|&y| y == 1).take(5000).collect();
    let neg: Vec<u8> = labels.iter().copied().filter(|&y| y == 0).take(5000).collect();
    if pos.len() < 5000 || neg.len() < 5000 {
        return outcome(false, format!("only {} positive / {} negative instances", pos.len(), neg.len()));
    }
    let balanced: Vec<u8> = pos.into_iter().chain(neg).collect();
    let scores = random_baseline(balanced.len(), 4);
    let m = compute_metrics(&scores, &balanced, 0.5).unwrap();
    outcome(
        (m.auc - 0.5).abs() <= 0.02,
        format!("AUC {:.4} on 10000 balanced instances (target 0.50 +- 0.02)", m.auc),
    )
}

fn synth_corpus(cfg: &SynthConfig) -> Corpus {
    parse_corpus(generate(cfg).unwrap().to_jsonl().as_bytes(), &FilterConfig::default())
        .unwrap()
        .corpus
}

fn write_corpus(dir: &Path, name: &str, cfg: &SynthConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, generate(cfg).unwrap().to_jsonl()).unwrap();
    path
}

fn desk_manifest(corpus: PathBuf, out: PathBuf, seed: u64) -> ExperimentManifest {
    ExperimentManifest {
        corpus,
        output_dir: out,
        train: TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 30,
            patience: 3,
            ..TrainConfig::default()
        },
        importance_repetitions: 5,
        seed,
        ..ExperimentManifest::default()
    }
}

/// Context signal only; text carries nothing.
fn context_corpus() -> SynthConfig {
    SynthConfig {
        trees: 1000,
        context_signal: 0.9,
        seed: 5,
        ..SynthConfig::default()
    }
}

fn planted_end_to_end(dir: &Path, planted: &RunSummary, planted_secs: f64) -> Outcome {
    let start = Instant::now();
    let mut control = desk_manifest(dir.join("context.jsonl"), dir.join("control"), 5);
    control.shuffle_labels = true;
    let shuffled = match run_experiment(&control) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("control run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64() + planted_secs;
    let auc = planted.metrics.test.auc;
    let control_auc = shuffled.metrics.test.auc;
    outcome(
        auc >= 0.90 && (0.45..=0.55).contains(&control_auc) && secs < 300.0,
        format!(
            "planted AUC {auc:.4} (>= 0.90), shuffled control AUC {control_auc:.4} (in [0.45, 0.55]), {} test instances, {secs:.1}s (limit 300s)",
            planted.metrics.instances.test
        ),
    )
}

fn ablation_ordering(dir: &Path) -> Outcome {
    let corpus = write_corpus(
        dir,
        "mixed.jsonl",
        &SynthConfig {
            trees: 500,
            context_signal: 0.5,
            text_signal: 0.6,
            seed: 6,
            ..SynthConfig::default()
        },
    );
    let mut aucs = Vec::new();
    for (name, mask) in [("full", FeatureMask::Full), ("no-text", FeatureMask::NoText), ("text-only", FeatureMask::TextOnly)] {
        let mut m = desk_manifest(corpus.clone(), dir.join(format!("ablation-{name}")), 6);
        m.classifier.mask = mask;
        m.importance_repetitions = 1;
        match run_experiment(&m) {
            Ok(s) => aucs.push(s.metrics.test.auc),
            Err(e) => return outcome(false, format!("{name} run failed: {e}")),
        }
    }
    let (full, no_text, text_only) = (aucs[0], aucs[1], aucs[2]);
    outcome(
        full >= no_text && full >= text_only,
        format!("AUC full {full:.4} >= no-text {no_text:.4} and >= text-only {text_only:.4}"),
    )
}

fn split_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for _ in 0..200 {
        let seed = rng.gen::<u64>();
        let n = rng.gen_range(20..=400);
        let corpus = Corpus::new(
            (0..n)
                .map(|i| ConversationTree::from_parent_indices(&format!("s{i}"), &[None, Some(0), Some(1)]))
                .collect(),
        );
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let s = split_by_conversation(&corpus, &spec).unwrap();
        let ids = |c: &Corpus| c.trees.iter().map(|t| t.conversation_id().to_string()).collect::<BTreeSet<_>>();
        let (tr, va, te) = (ids(&s.train), ids(&s.val), ids(&s.test));
        let disjoint = tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te);
        let exhaustive = tr.len() + va.len() + te.len() == n;
        let close = |got: usize, frac: f64| (got as f64 - frac * n as f64).abs() <= 1.0;
        if !(disjoint && exhaustive && close(tr.len(), 0.75) && close(va.len(), 0.05) && close(te.len(), 0.20)) {
            failures.push(format!("seed {seed} n {n}: {}/{}/{}", tr.len(), va.len(), te.len()));
        }
    }
    let detail = match failures.first() {
        None => "200 seeds conversation-disjoint, exhaustive, sized 75/5/20 +- 1".to_string(),
        Some(first) => format!("{} of 200 seeds violate the split law, first {first}", failures.len()),
    };
    outcome(failures.is_empty(), detail)
}

fn relaxation(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    for t in 0..1000 {
        let n = rng.gen_range(3..=120);
        let parents = random_parents(&mut rng, n);
        let tree = ConversationTree::from_parent_indices(&format!("r{t}"), &parents);
        let k = rng.gen_range(2..=tree.len());
        let prefix = tree.prefix(k).unwrap();
        let mut prev: BTreeSet<usize> = BTreeSet::new();
        for n in 1..=k {
            let w: BTreeSet<usize> = relaxation_window(&prefix, Some(n)).unwrap().into_iter().collect();
            if !prev.is_subset(&w) {
                violations += 1;
            }
            prev = w;
        }
        let all: BTreeSet<usize> = relaxation_window(&prefix, None).unwrap().into_iter().collect();
        if !prev.is_subset(&all) {
            violations += 1;
        }
    }
    let corpus = write_corpus(
        dir,
        "large-trees.jsonl",
        &SynthConfig {
            trees: 150,
            min_size: 40,
            max_size: 100,
            context_signal: 0.5,
            text_signal: 0.6,
            seed: 9,
            ..SynthConfig::default()
        },
    );
    let mut aucs = Vec::new();
    for (name, n) in [("15", Some(15)), ("inf", None)] {
        let mut m = desk_manifest(corpus.clone(), dir.join(format!("relax-{name}")), 9);
        m.relaxation = n;
        m.importance_repetitions = 1;
        match run_experiment(&m) {
            Ok(s) => aucs.push(s.metrics.test.auc),
            Err(e) => return outcome(false, format!("n={name} run failed: {e}")),
        }
    }
    let gap = (aucs[0] - aucs[1]).abs();
    outcome(
        violations == 0 && gap <= 0.03,
        format!(
            "{violations} monotonicity violations over 1000 prefixes; AUC n=15 {:.4} vs n=inf {:.4}, gap {gap:.4} (limit 0.03)",
            aucs[0], aucs[1]
        ),
    )
}

fn importance_sanity(planted: &RunSummary) -> Outcome {
    let report = &planted.importance;
    let ranked = report.ranked();
    let top = &ranked[0].name;
    // Pooled reply-to scores are noise on a context-only corpus.
    let pooled = &report.features[..20];
    let worst = pooled.iter().map(|f| f.importance.abs()).fold(0.0, f64::max);
    outcome(
        top == "is_op_author" && pooled.len() == 20 && worst <= 0.02 && report.repetitions == 5,
        format!(
            "top feature {top} (planted is_op_author, drop {:.4}); max |importance| over {} pooled-score columns {worst:.4} (limit 0.02); {} repetitions",
            ranked[0].importance,
            pooled.len(),
            report.repetitions
        ),
    )
}

fn reproducibility(dir: &Path) -> Outcome {
    let corpus = write_corpus(
        dir,
        "repro.jsonl",
        &SynthConfig {
            trees: 120,
            context_signal: 0.5,
            text_signal: 0.5,
            seed: 10,
            ..SynthConfig::default()
        },
    );
    let a = desk_manifest(corpus.clone(), dir.join("repro-a"), 10);
    let b = desk_manifest(corpus, dir.join("repro-b"), 10);
    if let Err(e) = run_experiment(&a).and_then(|_| run_experiment(&b)) {
        return outcome(false, format!("run failed: {e}"));
    }
    let files = ["metrics.json", "importance.json", "importance.csv", "roc.csv", "history.json", "model.json", "scores.jsonl"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.output_dir.join(f)).ok() != fs::read(b.output_dir.join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} of {} output files differ between two runs {differing:?}", differing.len(), files.len()),
    )
}

fn main() -> ExitCode {
    let dir = TempDir::new().expect("temporary directory");
    let report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        o.passed
    };

    let mut ok = true;
    ok &= report("label oracle", label_oracle());
    ok &= report("pooling oracle", pooling_oracle());
    ok &= report("gradient check", gradient_check());
    ok &= report("random baseline", random_baseline_auc());

    let start = Instant::now();
    write_corpus(dir.path(), "context.jsonl", &context_corpus());
    let planted = run_experiment(&desk_manifest(dir.path().join("context.jsonl"), dir.path().join("planted"), 5));
    match planted {
        Ok(planted) => {
            let secs = start.elapsed().as_secs_f64();
            ok &= report("planted-signal end-to-end", planted_end_to_end(dir.path(), &planted, secs));
            ok &= report("ablation ordering", ablation_ordering(dir.path()));
            ok &= report("split law", split_law());
            ok &= report("relaxation", relaxation(dir.path()));
            ok &= report("permutation importance", importance_sanity(&planted));
        }
        Err(e) => {
            let o = || outcome(false, format!("planted run failed: {e}"));
            ok &= report("planted-signal end-to-end", o());
            ok &= report("ablation ordering", ablation_ordering(dir.path()));
            ok &= report("split law", split_law());
            ok &= report("relaxation", relaxation(dir.path()));
            ok &= report("permutation importance", o());
        }
    }
    ok &= report("reproducibility", reproducibility(dir.path()));

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
