//! Command-line pipeline: synth, preprocess, sample, aggregate, train, tune,
//! evaluate, ensemble, sweep, report.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/schema error, 4 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::annotations::{
    aggregate_record, asian_focus_adjust, class_weights, corpus_stats, AnnotationRecord,
    Attribute, AttributeSchema, LabeledExample,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    ensemble_predictions, evaluate_predictions, seed_sweep, sweep_to_csv, MetricsReport,
    TaskPredictions,
};
use crate::io::{
    read_ndjson, sha256_file, write_atomic, write_json_pretty, write_ndjson, NormalizedRecord,
    PredictionRecord, TruthRecord,
};
use crate::model::{
    encode, predict, Checkpoint, LossConfig, LossKind, ModelConfig, TaskSpec,
};
use crate::preprocess::{
    boost_sample, categorize_tweet, normalize_tweet, NormalizedText, PhraseLists, Segmenter,
    Tweet,
};
use crate::synth::{generate, SynthSpec};
use crate::training::{
    split, train, kfold_tune, OptimizerConfig, Regime, SplitSpec, TrainConfig, TrainExample,
};

/// Category counts per task, fixed by the three attribute schemas.
pub const CATEGORY_COUNTS: [usize; 3] = [3, 2, 3];

#[derive(Parser, Debug)]
#[command(
    name = "softlabel",
    about = "Soft-label multitask hate-speech classification pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a deterministic synthetic corpus.
    Synth(SynthArgs),
    /// Normalize raw tweet text (and optionally categorize by phrase lists).
    Preprocess(PreprocessArgs),
    /// Boosted stratified sampling by month and category.
    Sample(SampleArgs),
    /// Aggregate per-annotator votes into soft/silver labels and stats.
    Aggregate(AggregateArgs),
    /// Train one or more seeded runs.
    Train(TrainArgs),
    /// K-fold grid search for hyperparameters.
    Tune(TuneArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Majority-vote ensemble over per-seed prediction files.
    Ensemble(EnsembleArgs),
    /// Macro metrics per ensemble size (plot-ready CSV).
    Sweep(SweepArgs),
    /// Render a metrics report (and optional stats block) as tables.
    Report(ReportArgs),
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, started),
        Command::Preprocess(a) => cmd_preprocess(a, started),
        Command::Sample(a) => cmd_sample(a, started),
        Command::Aggregate(a) => cmd_aggregate(a, started),
        Command::Train(a) => cmd_train(a, started),
        Command::Tune(a) => cmd_tune(a, started),
        Command::Evaluate(a) => cmd_evaluate(a, started),
        Command::Ensemble(a) => cmd_ensemble(a, started),
        Command::Sweep(a) => cmd_sweep(a, started),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub wall_clock_secs: f64,
}

fn write_manifest(
    dir: &Path,
    resolved_config: serde_json::Value,
    inputs: &[&Path],
    outputs: &[PathBuf],
    seeds: Vec<u64>,
    started: Instant,
) -> Result<()> {
    let checksum_map = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect()
    };
    let manifest = RunManifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        resolved_config,
        inputs: checksum_map(inputs)?,
        outputs: checksum_map(&outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?,
        seeds,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_json_pretty(&dir.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of tweets to generate.
    #[arg(long, default_value_t = 600)]
    n: usize,
    /// Annotator noise rate in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    annotators: usize,
    #[arg(long, default_value = "out/synth")]
    out_dir: PathBuf,
}

fn cmd_synth(args: SynthArgs, started: Instant) -> Result<()> {
    let spec = SynthSpec {
        num_tweets: args.n,
        eta: args.eta,
        seed: args.seed,
        annotators: args.annotators,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tweets_path = dir.join("tweets.ndjson");
    let annotations_path = dir.join("annotations.ndjson");
    let truth_path = dir.join("truth.ndjson");
    write_ndjson(&tweets_path, &corpus.tweets)?;
    write_ndjson(&annotations_path, &corpus.records)?;
    let truth: Vec<TruthRecord> = corpus
        .tweets
        .iter()
        .zip(&corpus.truth)
        .map(|(t, l)| TruthRecord {
            tweet_id: t.id.clone(),
            aggression: l.aggression,
            target: l.target,
            speech_type: l.speech_type,
        })
        .collect();
    write_ndjson(&truth_path, &truth)?;
    write_manifest(
        dir,
        serde_json::to_value(&spec).map_err(|e| Error::Schema(e.to_string()))?,
        &[],
        &[tweets_path, annotations_path, truth_path],
        vec![args.seed],
        started,
    )?;
    println!("generated {} tweets into {}", args.n, dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Input tweets (newline-delimited JSON {id, raw_text, month, category?}).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Anti-Asian phrase list, one phrase per line.
    #[arg(long)]
    anti_asian: Option<PathBuf>,
    /// Anti-Black phrase list, one phrase per line.
    #[arg(long)]
    anti_black: Option<PathBuf>,
    /// Hashtag-retention tracking keywords, one per line.
    #[arg(long)]
    tracking: Option<PathBuf>,
    /// Word-frequency lexicon override ("word count" lines).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Also assign categories by phrase matching on the raw text.
    #[arg(long, default_value_t = false)]
    categorize: bool,
}

fn load_lists(args: &PreprocessArgs) -> Result<PhraseLists> {
    match (&args.anti_asian, &args.anti_black) {
        (Some(a), Some(b)) => PhraseLists::from_files(a, b, args.tracking.as_deref()),
        (None, None) => {
            if args.categorize {
                return Err(Error::Config(
                    "--categorize requires --anti-asian and --anti-black".into(),
                ));
            }
            Ok(PhraseLists::default())
        }
        _ => Err(Error::Config(
            "--anti-asian and --anti-black must be given together".into(),
        )),
    }
}

fn cmd_preprocess(args: PreprocessArgs, started: Instant) -> Result<()> {
    let lists = load_lists(&args)?;
    let owned_segmenter = args
        .lexicon
        .as_deref()
        .map(Segmenter::from_file)
        .transpose()?;
    let segmenter = owned_segmenter.as_ref().unwrap_or_else(|| Segmenter::bundled());
    let tweets: Vec<Tweet> = read_ndjson(&args.input)?;
    let out: Vec<NormalizedRecord> = tweets
        .iter()
        .map(|t| {
            let category = if args.categorize {
                Some(categorize_tweet(&t.raw_text, &lists))
            } else {
                t.category
            };
            NormalizedRecord {
                id: t.id.clone(),
                text: normalize_tweet(&t.raw_text, &lists, segmenter).0,
                month: t.month.clone(),
                category,
            }
        })
        .collect();
    write_ndjson(&args.output, &out)?;
    if let Some(dir) = args.output.parent() {
        write_manifest(
            dir,
            serde_json::json!({"categorize": args.categorize}),
            &[args.input.as_path()],
            &[args.output.clone()],
            vec![],
            started,
        )?;
    }
    println!("normalized {} tweets -> {}", out.len(), args.output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sample

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Tweets to draw per month.
    #[arg(long)]
    quota: usize,
    /// Comma-separated month tags; defaults to all months present, sorted.
    #[arg(long, value_delimiter = ',')]
    months: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_sample(args: SampleArgs, started: Instant) -> Result<()> {
    let tweets: Vec<Tweet> = read_ndjson(&args.input)?;
    let months = if args.months.is_empty() {
        let mut m: Vec<String> = tweets.iter().map(|t| t.month.clone()).collect();
        m.sort();
        m.dedup();
        m
    } else {
        args.months.clone()
    };
    let outcome = boost_sample(tweets, args.quota, &months, args.seed)?;
    write_ndjson(&args.output, &outcome.tweets)?;
    for m in &outcome.months {
        if m.shortfall {
            eprintln!(
                "warning: month {} drew {} of quota {}",
                m.month,
                m.drawn.values().sum::<usize>(),
                m.quota
            );
        }
    }
    if let Some(dir) = args.output.parent() {
        write_json_pretty(&dir.join("sample_summary.json"), &outcome.months)?;
        write_manifest(
            dir,
            serde_json::json!({"quota": args.quota, "months": months, "seed": args.seed}),
            &[args.input.as_path()],
            &[args.output.clone(), dir.join("sample_summary.json")],
            vec![args.seed],
            started,
        )?;
    }
    println!("sampled {} tweets -> {}", outcome.tweets.len(), args.output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// aggregate

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Annotation votes (newline-delimited JSON {tweet_id, votes}).
    #[arg(long)]
    votes: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Corpus stats block output (kappa, counts, class cross-tab).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Skip the Asian-focus adjustment even if 4-category Target votes appear.
    #[arg(long, default_value_t = false)]
    no_adjust: bool,
}

fn cmd_aggregate(args: AggregateArgs, started: Instant) -> Result<()> {
    let mut records: Vec<AnnotationRecord> = read_ndjson(&args.votes)?;
    let mut repaired = 0;
    for r in &mut records {
        r.validate()?;
        repaired += r.repair_hierarchy();
    }
    if repaired > 0 {
        eprintln!("repaired {repaired} hierarchy-violating votes");
    }
    let has_four_category = records
        .iter()
        .any(|r| r.votes.target.iter().any(|v| v == "anti_black" || v == "both"));
    let four_records = has_four_category.then(|| records.clone());
    let (records, examples, dropped) = if has_four_category && !args.no_adjust {
        let out = asian_focus_adjust(records)?;
        (out.records, out.examples, out.dropped)
    } else {
        let agg = AttributeSchema::aggression();
        let tgt = AttributeSchema::target_binary();
        let typ = AttributeSchema::speech_type();
        let examples = records
            .iter()
            .map(|r| aggregate_record(r, &agg, &tgt, &typ))
            .collect::<Result<Vec<_>>>()?;
        (records, examples, 0)
    };
    let stats = corpus_stats(&records, &examples, dropped, four_records.as_deref())?;
    write_ndjson(&args.output, &examples)?;
    let mut outputs = vec![args.output.clone()];
    if let Some(stats_path) = &args.stats {
        write_json_pretty(stats_path, &stats)?;
        outputs.push(stats_path.clone());
    }
    if let Some(dir) = args.output.parent() {
        write_manifest(
            dir,
            serde_json::json!({"no_adjust": args.no_adjust, "repaired": repaired}),
            &[args.votes.as_path()],
            &outputs,
            vec![],
            started,
        )?;
    }
    println!(
        "aggregated {} tweets ({} dropped by adjustment) -> {}",
        examples.len(),
        dropped,
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared train/tune plumbing

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Single,
    Multitask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Aggression,
    Target,
    Type,
}

impl TaskArg {
    fn index(self) -> usize {
        match self {
            TaskArg::Aggression => 0,
            TaskArg::Target => 1,
            TaskArg::Type => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Ce,
    Klnll,
}

/// Optional config-file values; CLI flags win over file values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: ModelSection,
    train: TrainSection,
    split: SplitSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    encoder_dim: Option<usize>,
    hidden_dim: Option<usize>,
    intermediate_dim: Option<usize>,
    dropout_p: Option<f64>,
    leaky_relu_slope: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    weight_decay: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    softmax_targets: Option<bool>,
    kl_swap_args: Option<bool>,
    lambdas: Option<Vec<f64>>,
    /// task-name -> learning rate override for that head.
    head_learning_rates: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitSection {
    train_fraction: Option<f64>,
    folds: Option<usize>,
    seed: Option<u64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Args, Debug, Clone)]
struct CommonTrainArgs {
    /// Aggregated labels (newline-delimited LabeledExample JSON).
    #[arg(long)]
    data: PathBuf,
    /// Normalized text records matching the labels by id.
    #[arg(long)]
    text: PathBuf,
    /// Optional TOML config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RegimeArg::Multitask)]
    regime: RegimeArg,
    /// Task for --regime single.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum, default_value_t = LossArg::Klnll)]
    loss: LossArg,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Use raw soft labels as KL targets instead of their softmax.
    #[arg(long, default_value_t = false)]
    no_softmax_targets: bool,
    /// Per-task loss weights, e.g. 0.2,0.2,1.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Head learning-rate override, task=lr (repeatable).
    #[arg(long = "head-lr")]
    head_lr: Vec<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    intermediate_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Named hyperparameter preset; "paper-single-task" applies the published
    /// single-task values (lr 2e-5, batch 20, per-task epochs and alpha/beta).
    #[arg(long)]
    preset: Option<String>,
}

struct ResolvedSetup {
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split_spec: SplitSpec,
}

fn parse_head_lr(entries: &[String]) -> Result<Vec<(usize, f64)>> {
    entries
        .iter()
        .map(|e| {
            let (task, lr) = e.split_once('=').ok_or_else(|| {
                Error::Config(format!("--head-lr expects task=lr, got {e:?}"))
            })?;
            let idx = match task {
                "aggression" => 0,
                "target" => 1,
                "type" => 2,
                _ => {
                    return Err(Error::Config(format!(
                        "--head-lr: unknown task {task:?}"
                    )))
                }
            };
            let lr: f64 = lr
                .parse()
                .map_err(|_| Error::Config(format!("--head-lr: bad value {lr:?}")))?;
            Ok((idx, lr))
        })
        .collect()
}

fn task_name_to_index(name: &str) -> Result<usize> {
    match name {
        "aggression" => Ok(0),
        "target" => Ok(1),
        "type" => Ok(2),
        _ => Err(Error::Config(format!("unknown task {name:?}"))),
    }
}

/// Published single-task hyperparameters, keyed by (loss, task).
fn apply_paper_preset(cfg: &mut ResolvedState, loss: LossArg, task: Option<usize>) {
    cfg.learning_rate.get_or_insert(2e-5);
    cfg.batch_size.get_or_insert(20);
    let task = task.unwrap_or(2);
    match loss {
        LossArg::Ce => {
            cfg.max_epochs.get_or_insert([3, 5, 3][task]);
        }
        LossArg::Klnll => {
            cfg.max_epochs.get_or_insert([3, 2, 2][task]);
            cfg.alpha.get_or_insert(1.0);
            cfg.beta.get_or_insert([0.5, 0.2, 0.2][task]);
        }
    }
}

#[derive(Default)]
struct ResolvedState {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

fn resolve_setup(
    args: &CommonTrainArgs,
    class_weight_sets: Vec<Vec<f64>>,
    seed: u64,
) -> Result<ResolvedSetup> {
    let file = load_file_config(args.config.as_deref())?;
    let regime = match args.regime {
        RegimeArg::Multitask => Regime::Multitask,
        RegimeArg::Single => {
            let task = args
                .task
                .ok_or_else(|| Error::Config("--regime single requires --task".into()))?;
            Regime::Single(task.index())
        }
    };
    // flag > file > preset > default
    let mut state = ResolvedState {
        learning_rate: args.lr.or(file.train.learning_rate),
        batch_size: args.batch_size.or(file.train.batch_size),
        max_epochs: args.epochs.or(file.train.max_epochs),
        alpha: args.alpha.or(file.train.alpha),
        beta: args.beta.or(file.train.beta),
    };
    match args.preset.as_deref() {
        Some("paper-single-task") => {
            apply_paper_preset(&mut state, args.loss, args.task.map(TaskArg::index))
        }
        Some(other) => {
            return Err(Error::Config(format!("unknown preset {other:?}")));
        }
        None => {}
    }
    let model_cfg = ModelConfig {
        encoder_dim: args.encoder_dim.or(file.model.encoder_dim).unwrap_or(4096),
        hidden_dim: args.hidden_dim.or(file.model.hidden_dim).unwrap_or(64),
        intermediate_dim: args
            .intermediate_dim
            .or(file.model.intermediate_dim)
            .unwrap_or(364),
        tasks: vec![
            TaskSpec { id: "aggression".into(), num_categories: 3 },
            TaskSpec { id: "target".into(), num_categories: 2 },
            TaskSpec { id: "type".into(), num_categories: 3 },
        ],
        dropout_p: args.dropout.or(file.model.dropout_p).unwrap_or(0.2),
        leaky_relu_slope: file.model.leaky_relu_slope.unwrap_or(0.01),
    };
    let mut head_learning_rates = parse_head_lr(&args.head_lr)?;
    if head_learning_rates.is_empty() {
        if let Some(map) = &file.train.head_learning_rates {
            for (name, lr) in map {
                head_learning_rates.push((task_name_to_index(name)?, *lr));
            }
        }
    }
    let lambdas = if !args.lambdas.is_empty() {
        if args.lambdas.len() != 3 {
            return Err(Error::Config("--lambdas needs exactly 3 values".into()));
        }
        args.lambdas.clone()
    } else {
        file.train.lambdas.clone().unwrap_or_else(|| vec![1.0; 3])
    };
    let softmax_targets = if args.no_softmax_targets {
        false
    } else {
        file.train.softmax_targets.unwrap_or(true)
    };
    let loss = LossConfig {
        kind: match args.loss {
            LossArg::Ce => LossKind::Ce,
            LossArg::Klnll => LossKind::Klnll,
        },
        alpha: state.alpha.unwrap_or(1.0),
        beta: state.beta.unwrap_or(1.0),
        softmax_targets,
        kl_swap_args: file.train.kl_swap_args.unwrap_or(false),
        class_weights: class_weight_sets,
        task_lambdas: lambdas,
    };
    let train_cfg = TrainConfig {
        // Desk-scale default; the transformer-scale 2e-5 ships in the preset.
        learning_rate: state.learning_rate.unwrap_or(1e-2),
        head_learning_rates,
        batch_size: state.batch_size.unwrap_or(20),
        max_epochs: state.max_epochs.unwrap_or(10),
        seed,
        optimizer: OptimizerConfig {
            weight_decay: file.train.weight_decay.unwrap_or(0.01),
            ..OptimizerConfig::default()
        },
        loss,
        regime,
    };
    let split_spec = SplitSpec {
        train_fraction: args
            .train_fraction
            .or(file.split.train_fraction)
            .unwrap_or(0.8),
        folds: file.split.folds.unwrap_or(4),
        seed: args.split_seed.or(file.split.seed).unwrap_or(0),
    };
    Ok(ResolvedSetup {
        model_cfg,
        train_cfg,
        split_spec,
    })
}

/// Joins labels with normalized text and encodes features.
fn build_examples(
    data: &Path,
    text: &Path,
    model_cfg: &ModelConfig,
) -> Result<Vec<TrainExample>> {
    let labels: Vec<LabeledExample> = read_ndjson(data)?;
    let texts: Vec<NormalizedRecord> = read_ndjson(text)?;
    let by_id: BTreeMap<&str, &NormalizedRecord> =
        texts.iter().map(|t| (t.id.as_str(), t)).collect();
    labels
        .iter()
        .map(|ex| {
            let rec = by_id.get(ex.tweet_id.as_str()).ok_or_else(|| {
                Error::Schema(format!("tweet_id {} missing from text file", ex.tweet_id))
            })?;
            let features = encode(&NormalizedText(rec.text.clone()), model_cfg);
            Ok(TrainExample {
                id: ex.tweet_id.clone(),
                features,
                targets: crate::model::SampleTargets {
                    soft: vec![
                        ex.aggression.soft.clone(),
                        ex.target.soft.clone(),
                        ex.speech_type.soft.clone(),
                    ],
                    silver: vec![ex.aggression.silver, ex.target.silver, ex.speech_type.silver],
                },
            })
        })
        .collect()
}

/// Class weights per task from training-split silver counts.
fn train_split_class_weights(train_set: &[TrainExample]) -> Result<Vec<Vec<f64>>> {
    CATEGORY_COUNTS
        .iter()
        .enumerate()
        .map(|(t, &k)| {
            let mut counts = vec![0usize; k];
            for ex in train_set {
                counts[ex.targets.silver[t]] += 1;
            }
            class_weights(&counts)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Comma-separated seeds; one independent run each.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "out/train")]
    out_dir: PathBuf,
    /// Parallel workers across seeds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn cmd_train(args: TrainArgs, started: Instant) -> Result<()> {
    let setup_probe = resolve_setup(&args.common, vec![], 0)?;
    let examples = build_examples(&args.common.data, &args.common.text, &setup_probe.model_cfg)?;
    let (train_set, test_set) = split(&examples, &setup_probe.split_spec)?;
    let weights = train_split_class_weights(&train_set)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    // Gold labels of the test split, for evaluate/ensemble/sweep.
    let golds: Vec<PredictionRecord> = test_set
        .iter()
        .map(|ex| PredictionRecord {
            tweet_id: ex.id.clone(),
            aggression: ex.targets.silver[0],
            target: ex.targets.silver[1],
            speech_type: ex.targets.silver[2],
        })
        .collect();
    let golds_path = dir.join("golds_test.ndjson");
    write_ndjson(&golds_path, &golds)?;

    let mut outputs = vec![golds_path];
    let run_one = |seed: u64| -> Result<(u64, Vec<PathBuf>)> {
        let setup = resolve_setup(&args.common, weights.clone(), seed)?;
        let result = train(&train_set, &setup.train_cfg, &setup.model_cfg)?;
        if let Some((epoch, reason)) = &result.diverged {
            return Err(Error::Diverged {
                epoch: *epoch,
                reason: reason.clone(),
            });
        }
        let ck_path = dir.join(format!("checkpoint_seed{seed}.json"));
        Checkpoint::new(setup.model_cfg.clone(), result.params.clone()).save(&ck_path)?;
        let hist_path = dir.join(format!("history_seed{seed}.ndjson"));
        write_ndjson(&hist_path, &result.history)?;
        let preds: Vec<PredictionRecord> = test_set
            .iter()
            .map(|ex| {
                let p = predict(&result.params, &ex.features, &setup.model_cfg)?;
                Ok(PredictionRecord {
                    tweet_id: ex.id.clone(),
                    aggression: p[0],
                    target: p[1],
                    speech_type: p[2],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let preds_path = dir.join(format!("preds_seed{seed}.ndjson"));
        write_ndjson(&preds_path, &preds)?;
        Ok((seed, vec![ck_path, hist_path, preds_path]))
    };

    let results: Vec<Result<(u64, Vec<PathBuf>)>> = if args.jobs <= 1 {
        args.seeds.iter().map(|&s| run_one(s)).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = args
                .seeds
                .iter()
                .map(|&s| scope.spawn(move || run_one(s)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect()
        })
    };
    for r in results {
        let (_, mut paths) = r?;
        outputs.append(&mut paths);
    }
    let resolved = resolve_setup(&args.common, weights, args.seeds[0])?;
    write_manifest(
        dir,
        serde_json::json!({
            "model": resolved.model_cfg,
            "train": resolved.train_cfg,
            "split": resolved.split_spec,
        }),
        &[args.common.data.as_path(), args.common.text.as_path()],
        &outputs,
        args.seeds.clone(),
        started,
    )?;
    println!(
        "trained {} seed(s); artifacts in {}",
        args.seeds.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tune

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Candidate learning rates.
    #[arg(long, value_delimiter = ',')]
    grid_lr: Vec<f64>,
    /// Candidate batch sizes.
    #[arg(long, value_delimiter = ',')]
    grid_batch: Vec<usize>,
    /// Candidate epoch counts.
    #[arg(long, value_delimiter = ',')]
    grid_epochs: Vec<usize>,
    /// Candidate alpha values (KLNLL only).
    #[arg(long, value_delimiter = ',')]
    grid_alpha: Vec<f64>,
    /// Candidate beta values (KLNLL only).
    #[arg(long, value_delimiter = ',')]
    grid_beta: Vec<f64>,
    /// Candidate per-task lambda values; the cross product over the 3 tasks is
    /// searched (multitask only), e.g. 0.2,0.5,0.8,1.
    #[arg(long, value_delimiter = ',')]
    grid_lambda: Vec<f64>,
    #[arg(long, default_value = "out/tune")]
    out_dir: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
}

fn cmd_tune(args: TuneArgs, started: Instant) -> Result<()> {
    let setup_probe = resolve_setup(&args.common, vec![], 0)?;
    let examples = build_examples(&args.common.data, &args.common.text, &setup_probe.model_cfg)?;
    let (train_set, _test) = split(&examples, &setup_probe.split_spec)?;
    let weights = train_split_class_weights(&train_set)?;
    let base = resolve_setup(&args.common, weights, 0)?;
    let mut spec = base.split_spec.clone();
    if let Some(f) = args.folds {
        spec.folds = f;
    }

    let one_if_empty = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let lrs = one_if_empty(&args.grid_lr, base.train_cfg.learning_rate);
    let batches = if args.grid_batch.is_empty() {
        vec![base.train_cfg.batch_size]
    } else {
        args.grid_batch.clone()
    };
    let epochs = if args.grid_epochs.is_empty() {
        vec![base.train_cfg.max_epochs]
    } else {
        args.grid_epochs.clone()
    };
    let alphas = one_if_empty(&args.grid_alpha, base.train_cfg.loss.alpha);
    let betas = one_if_empty(&args.grid_beta, base.train_cfg.loss.beta);
    let lambda_sets: Vec<Vec<f64>> = if args.grid_lambda.is_empty() {
        vec![base.train_cfg.loss.task_lambdas.clone()]
    } else {
        let vals = &args.grid_lambda;
        let mut sets = Vec::new();
        for &a in vals {
            for &b in vals {
                for &c in vals {
                    sets.push(vec![a, b, c]);
                }
            }
        }
        sets
    };

    let mut candidates = Vec::new();
    for &lr in &lrs {
        for &bs in &batches {
            for &ep in &epochs {
                for &alpha in &alphas {
                    for &beta in &betas {
                        for lams in &lambda_sets {
                            let mut cfg = base.train_cfg.clone();
                            cfg.learning_rate = lr;
                            cfg.batch_size = bs;
                            cfg.max_epochs = ep;
                            cfg.loss.alpha = alpha;
                            cfg.loss.beta = beta;
                            cfg.loss.task_lambdas = lams.clone();
                            candidates.push(cfg);
                        }
                    }
                }
            }
        }
    }
    println!("evaluating {} grid points over {} folds", candidates.len(), spec.folds);
    let result = kfold_tune(&train_set, &candidates, &spec, &base.model_cfg)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let best_path = dir.join("best_config.json");
    write_json_pretty(&best_path, &result.best)?;
    let scores_path = dir.join("scores.json");
    write_json_pretty(
        &scores_path,
        &serde_json::json!({
            "best_index": result.best_index,
            "scores": result.scores,
        }),
    )?;
    write_manifest(
        dir,
        serde_json::json!({"candidates": candidates.len(), "folds": spec.folds}),
        &[args.common.data.as_path(), args.common.text.as_path()],
        &[best_path, scores_path],
        vec![],
        started,
    )?;
    println!(
        "best grid point {} with mean macro F1 {:.4}",
        result.best_index, result.scores[result.best_index]
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / ensemble / sweep / report

fn aligned_preds(
    golds: &[PredictionRecord],
    preds: &[PredictionRecord],
) -> Result<(Vec<TaskPredictions>, Vec<TaskPredictions>)> {
    let by_id: BTreeMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
    let mut g = Vec::with_capacity(golds.len());
    let mut p = Vec::with_capacity(golds.len());
    for gold in golds {
        let pred = by_id.get(gold.tweet_id.as_str()).ok_or_else(|| {
            Error::Schema(format!("no prediction for tweet_id {}", gold.tweet_id))
        })?;
        g.push(gold.as_array());
        p.push(pred.as_array());
    }
    Ok((g, p))
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

fn cmd_evaluate(args: EvaluateArgs, started: Instant) -> Result<()> {
    let golds: Vec<PredictionRecord> = read_ndjson(&args.gold)?;
    let preds: Vec<PredictionRecord> = read_ndjson(&args.preds)?;
    let (g, p) = aligned_preds(&golds, &preds)?;
    let report = evaluate_predictions(&g, &p, CATEGORY_COUNTS)?;
    write_json_pretty(&args.report, &report)?;
    if let Some(dir) = args.report.parent() {
        write_manifest(
            dir,
            serde_json::Value::Null,
            &[args.preds.as_path(), args.gold.as_path()],
            &[args.report.clone()],
            vec![],
            started,
        )?;
    }
    print_report(&report, None);
    Ok(())
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Per-seed prediction files, comma separated, ascending seed order.
    #[arg(long, value_delimiter = ',')]
    preds: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Optional gold labels; writes a metrics report next to the output.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn read_seed_predictions(
    paths: &[PathBuf],
) -> Result<(Vec<String>, Vec<Vec<TaskPredictions>>)> {
    if paths.is_empty() {
        return Err(Error::Config("at least one prediction file required".into()));
    }
    let first: Vec<PredictionRecord> = read_ndjson(&paths[0])?;
    let ids: Vec<String> = first.iter().map(|p| p.tweet_id.clone()).collect();
    let mut per_seed = vec![first.iter().map(PredictionRecord::as_array).collect::<Vec<_>>()];
    for path in &paths[1..] {
        let recs: Vec<PredictionRecord> = read_ndjson(path)?;
        let by_id: BTreeMap<&str, &PredictionRecord> =
            recs.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
        let aligned = ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|p| p.as_array())
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "{}: missing tweet_id {id}",
                            path.display()
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        per_seed.push(aligned);
    }
    Ok((ids, per_seed))
}

fn cmd_ensemble(args: EnsembleArgs, started: Instant) -> Result<()> {
    let (ids, per_seed) = read_seed_predictions(&args.preds)?;
    let (finals, three_way) = ensemble_predictions(&per_seed, CATEGORY_COUNTS)?;
    let out: Vec<PredictionRecord> = ids
        .iter()
        .zip(&finals)
        .map(|(id, p)| PredictionRecord {
            tweet_id: id.clone(),
            aggression: p[0],
            target: p[1],
            speech_type: p[2],
        })
        .collect();
    write_ndjson(&args.output, &out)?;
    if three_way > 0 {
        eprintln!("note: {three_way} decisions used the three-way tie cascade (extension rule)");
    }
    let mut outputs = vec![args.output.clone()];
    if let Some(gold_path) = &args.gold {
        let golds: Vec<PredictionRecord> = read_ndjson(gold_path)?;
        let (g, p) = aligned_preds(&golds, &out)?;
        let mut report = evaluate_predictions(&g, &p, CATEGORY_COUNTS)?;
        report.three_way_ties = three_way;
        let report_path = args
            .report
            .clone()
            .unwrap_or_else(|| args.output.with_extension("report.json"));
        write_json_pretty(&report_path, &report)?;
        outputs.push(report_path);
        print_report(&report, None);
    }
    if let Some(dir) = args.output.parent() {
        let inputs: Vec<&Path> = args.preds.iter().map(PathBuf::as_path).collect();
        write_manifest(
            dir,
            serde_json::json!({"seeds": args.preds.len(), "three_way_ties": three_way}),
            &inputs,
            &outputs,
            vec![],
            started,
        )?;
    }
    println!("ensembled {} seeds -> {}", args.preds.len(), args.output.display());
    Ok(())
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Per-seed prediction files, ascending seed order.
    #[arg(long, value_delimiter = ',')]
    preds: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    /// Output CSV of (num_seeds, task, precision, recall, f1).
    #[arg(long)]
    output: PathBuf,
}

fn cmd_sweep(args: SweepArgs, started: Instant) -> Result<()> {
    let (ids, per_seed) = read_seed_predictions(&args.preds)?;
    let golds: Vec<PredictionRecord> = read_ndjson(&args.gold)?;
    let by_id: BTreeMap<&str, &PredictionRecord> =
        golds.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
    let gold_arr = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|p| p.as_array())
                .ok_or_else(|| Error::Schema(format!("no gold for tweet_id {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = seed_sweep(&per_seed, &gold_arr, CATEGORY_COUNTS)?;
    write_atomic(&args.output, sweep_to_csv(&rows).as_bytes())?;
    if let Some(dir) = args.output.parent() {
        let inputs: Vec<&Path> = args
            .preds
            .iter()
            .chain(std::iter::once(&args.gold))
            .map(PathBuf::as_path)
            .collect();
        write_manifest(
            dir,
            serde_json::json!({"seeds": args.preds.len()}),
            &inputs,
            &[args.output.clone()],
            vec![],
            started,
        )?;
    }
    println!("wrote sweep table -> {}", args.output.display());
    Ok(())
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Optional corpus stats block to render alongside.
    #[arg(long)]
    stats: Option<PathBuf>,
}

fn task_category_names(task: Attribute) -> Vec<String> {
    match task {
        Attribute::Aggression => AttributeSchema::aggression().categories,
        Attribute::Target => AttributeSchema::target_binary().categories,
        Attribute::Type => AttributeSchema::speech_type().categories,
    }
}

fn print_report(report: &MetricsReport, stats: Option<&crate::annotations::CorpusStats>) {
    println!("evaluated {} tweets", report.evaluated);
    for tm in &report.tasks {
        let names = task_category_names(tm.task);
        println!("\ntask {}", tm.task);
        println!("  {:<12} {:>9} {:>9} {:>9}", "category", "P", "R", "F1");
        for (name, prf) in names.iter().zip(&tm.prf.per_category) {
            println!(
                "  {:<12} {:>9.4} {:>9.4} {:>9.4}",
                name, prf.precision, prf.recall, prf.f1
            );
        }
        println!(
            "  {:<12} {:>9.4} {:>9.4} {:>9.4}",
            "macro", tm.prf.macro_precision, tm.prf.macro_recall, tm.prf.macro_f1
        );
    }
    println!("\nself-contradictory predictions: {}", report.contradictions);
    if report.three_way_ties > 0 {
        println!("three-way tie cascades used: {}", report.three_way_ties);
    }
    if let Some(stats) = stats {
        println!("\ncorpus: {} tweets ({} dropped by adjustment)", stats.num_tweets, stats.dropped_by_adjustment);
        for (attr, kappa) in &stats.kappa {
            match kappa.value() {
                Some(v) => println!("  fleiss kappa [{attr}]: {v:.4}"),
                None => println!("  fleiss kappa [{attr}]: undefined (single category)"),
            }
        }
        if let Some(k4) = &stats.kappa_target_four {
            match k4.value() {
                Some(v) => println!("  fleiss kappa [target, 4-category]: {v:.4}"),
                None => println!("  fleiss kappa [target, 4-category]: undefined"),
            }
        }
        println!("  annotation-class cross-tab:");
        for (attr, table) in &stats.class_crosstab {
            for (cat, classes) in table {
                let cells: Vec<String> =
                    classes.iter().map(|(c, n)| format!("{c}={n}")).collect();
                println!("    {attr}/{cat}: {}", cells.join(" "));
            }
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.report).map_err(|e| Error::io(&args.report, e))?;
    let report: MetricsReport =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    let stats = args
        .stats
        .as_deref()
        .map(|p| -> Result<crate::annotations::CorpusStats> {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))
        })
        .transpose()?;
    print_report(&report, stats.as_ref());
    Ok(())
}
