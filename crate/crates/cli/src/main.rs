use std::path::PathBuf;
use std::process::ExitCode;

use branchpred::features::FeatureMask;
use branchpred::FilterConfig;
use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(name = "branchpred", version, about = "Predict whether a new comment branches a conversation tree")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct FilterArgs {
    /// Drop conversations with fewer surviving comments.
    #[arg(long, default_value_t = 10)]
    pub min_comments: usize,
    /// Bot account to remove (repeatable; replaces the defaults).
    #[arg(long = "bot-author")]
    pub bot_authors: Vec<String>,
    /// Comment text marking a deletion (repeatable; replaces the defaults).
    #[arg(long = "deletion-marker")]
    pub deletion_markers: Vec<String>,
}

impl FilterArgs {
    pub fn config(&self) -> FilterConfig {
        let defaults = FilterConfig::default();
        FilterConfig {
            min_comments: self.min_comments,
            bot_authors: if self.bot_authors.is_empty() { defaults.bot_authors } else { self.bot_authors.clone() },
            deletion_markers: if self.deletion_markers.is_empty() {
                defaults.deletion_markers
            } else {
                self.deletion_markers.clone()
            },
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.20)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
}

/// Relaxation window size; `None` pools the whole prefix.
#[derive(Clone, Copy, Debug)]
pub struct Relaxation(pub Option<usize>);

fn parse_relaxation(s: &str) -> Result<Relaxation, String> {
    match s {
        "inf" | "all" | "none" => Ok(Relaxation(None)),
        _ => match s.parse::<usize>() {
            Ok(0) => Err("relaxation must be positive (or `inf`)".into()),
            Ok(n) => Ok(Relaxation(Some(n))),
            Err(_) => Err(format!("expected a positive integer or `inf`, got {s:?}")),
        },
    }
}

fn parse_mask(s: &str) -> Result<FeatureMask, String> {
    match s {
        "full" => Ok(FeatureMask::Full),
        "text-only" => Ok(FeatureMask::TextOnly),
        "no-text" => Ok(FeatureMask::NoText),
        _ => Err(format!("expected full, text-only or no-text, got {s:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate JSONL exports, write a filtered corpus and print its statistics.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Generate a synthetic corpus with optional planted signals.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Where to write generator metadata (default: <out>.meta.json).
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 10)]
        min_size: usize,
        #[arg(long, default_value_t = 30)]
        max_size: usize,
        /// Target fraction of branch instances labelled 1.
        #[arg(long, default_value_t = 0.3)]
        branching: f64,
        #[arg(long, default_value_t = 0.1)]
        root_reply_prob: f64,
        #[arg(long, default_value_t = 20)]
        authors: usize,
        #[arg(long, default_value_t = 0.0)]
        context_signal: f64,
        #[arg(long)]
        invert_context: bool,
        #[arg(long, default_value_t = 0.0)]
        text_signal: f64,
        #[arg(long, default_value_t = 300)]
        vocabulary: usize,
        #[arg(long, default_value = "c")]
        id_prefix: String,
    },
    /// Split a corpus by conversation and build the reply-pair dataset from the training part.
    Pairs {
        #[arg(long)]
        corpus: PathBuf,
        /// Receives train.jsonl, val.jsonl, test.jsonl and pairs.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        negative_ratio: f64,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Train the lexical reply-to scorer on a pair dataset.
    TrainScorer {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0.1)]
        holdout_fraction: f64,
    },
    /// Score every (candidate, new comment) pair the features need into a cache.
    ///
    /// Uses a trained lexical scorer, or an external sidecar given after `--`.
    Score {
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "command", required_unless_present = "command")]
        scorer: Option<PathBuf>,
        /// Seconds to wait for the sidecar before giving up.
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        #[arg(long, default_value = "15", value_parser = parse_relaxation)]
        relaxation: Relaxation,
        #[command(flatten)]
        filter: FilterArgs,
        /// Sidecar command line.
        #[arg(last = true)]
        command: Vec<String>,
    },
    /// Extract the feature matrix of a corpus from a score cache.
    Features {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Most recent leaves whose paths are pooled, or `inf`.
        #[arg(long, default_value = "15", value_parser = parse_relaxation)]
        relaxation: Relaxation,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Train the branch classifier.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_mask)]
        mask: FeatureMask,
        #[arg(long, default_value_t = 100)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 5e-5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 120)]
        batch_size: usize,
        #[arg(long, default_value_t = 5)]
        max_epochs: usize,
        #[arg(long, default_value_t = 1)]
        patience: usize,
    },
    /// Evaluate a classifier against a random baseline.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// ROC curve points as CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Evaluate a classifier on another community's features.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// In-domain metrics (from `eval` or `run`) to compute degradation.
        #[arg(long)]
        in_domain: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Permutation importance of every feature column.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every stage from an experiment manifest.
    Run {
        manifest: PathBuf,
        /// Overrides the manifest seed; one of the two is required.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check that a sidecar scorer speaks the protocol.
    CheckSidecar {
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        #[arg(last = true, required = true)]
        command: Vec<String>,
    },
    /// Reference sidecar on stdin/stdout, scoring by shared-token overlap.
    #[command(hide = true)]
    StubSidecar {
        #[arg(long, default_value = "stub")]
        name: String,
        /// Answer every request with this score instead.
        #[arg(long)]
        constant: Option<f64>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Ingest { inputs, out, stats, filter } => commands::ingest(&inputs, &out, stats.as_deref(), &filter.config()),
        Command::Synth {
            out,
            seed,
            metadata,
            trees,
            min_size,
            max_size,
            branching,
            root_reply_prob,
            authors,
            context_signal,
            invert_context,
            text_signal,
            vocabulary,
            id_prefix,
        } => {
            let config = branchpred::synth::SynthConfig {
                trees,
                min_size,
                max_size,
                branching,
                root_reply_prob,
                authors,
                context_signal,
                invert_context,
                text_signal,
                vocabulary,
                id_prefix,
                seed,
            };
            commands::synth(&config, &out, metadata.as_deref())
        }
        Command::Pairs { corpus, out_dir, seed, negative_ratio, split, filter } => {
            commands::pairs(&corpus, &out_dir, seed, negative_ratio, &split, &filter.config())
        }
        Command::TrainScorer { pairs, out, seed, learning_rate, epochs, l2, holdout_fraction } => {
            let hyper = branchpred::scorer::LexicalHyper {
                learning_rate,
                epochs,
                l2,
                holdout_fraction,
                seed: branchpred::pipeline::derive_seed(seed, branchpred::pipeline::SCORER_STREAM),
            };
            commands::train_scorer(&pairs, &out, &hyper)
        }
        Command::Score { corpora, out, scorer, timeout_secs, relaxation, filter, command } => {
            commands::score(&corpora, &out, scorer.as_deref(), &command, timeout_secs, relaxation.0, &filter.config())
        }
        Command::Features { corpus, scores, out, relaxation, filter } => {
            commands::features(&corpus, &scores, &out, relaxation.0, &filter.config())
        }
        Command::Train {
            train,
            val,
            out,
            seed,
            history,
            mask,
            hidden_dim,
            dropout,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
        } => {
            let classifier = branchpred::model::ClassifierConfig { hidden_dim, dropout_rate: dropout, mask };
            let train_config = branchpred::model::TrainConfig {
                learning_rate,
                batch_size,
                max_epochs,
                patience,
                ..Default::default()
            };
            commands::train(&train, &val, &out, history.as_deref(), &classifier, &train_config, seed)
        }
        Command::Eval { model, features, seed, threshold, out, roc } => {
            commands::eval(&model, &features, seed, threshold, out.as_deref(), roc.as_deref())
        }
        Command::Transfer { model, features, in_domain, threshold, out } => {
            commands::transfer(&model, &features, in_domain.as_deref(), threshold, out.as_deref())
        }
        Command::Importance { model, features, seed, repetitions, out, csv } => {
            commands::importance(&model, &features, seed, repetitions, out.as_deref(), csv.as_deref())
        }
        Command::Run { manifest, seed, output_dir } => commands::run(&manifest, seed, output_dir),
        Command::CheckSidecar { timeout_secs, command } => commands::check_sidecar(&command, timeout_secs),
        Command::StubSidecar { name, constant } => commands::stub_sidecar(&name, constant),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
