//! The pipeline as deterministic subcommands of one binary: graph walks,
//! concept embeddings, dataset construction, training, prediction,
//! evaluation, and gradient checking.
//!
//! Configuration precedence is named flags > `--set` overrides > config
//! file > built-in defaults. Every run echoes its effective configuration
//! next to its outputs (`<out>.config` beside files, `config.txt` inside
//! output directories) in the same flat format the loader accepts, so any
//! run can be reproduced from its artifacts alone.
//!
//! All randomness flows from the single `seed` value; identical inputs
//! plus an identical seed produce byte-identical outputs.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or
//! configuration, 3 gradient-check failure.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{
    asynchronous_split, keyword_top_k, negative_sample_ambiguous, negative_sample_random,
    synchronous_split, NegativeSampleSpec, SplitManifest, DEFAULT_KEYWORD_COUNT,
};
use crate::embed::{
    load_word_vectors, save_embeddings, train_skipgram, EmbeddingMatrix, SkipGramConfig,
    VectorFormat,
};
use crate::eval::{
    confusion, format_percent, precision_recall_f1, read_predictions, write_predictions,
};
use crate::kg::{generate_corpus, KnowledgeGraph, WalkConfig, WalkCorpus};
use crate::model::{
    check_model_gradients, encode_labeled, write_history_csv, EmbeddingSet, ModelCheckpoint,
    ModelConfig, TrainInput, Variant,
};
use crate::nn::gradcheck::REL_ERR_TOLERANCE;
use crate::nn::layers::{Conv1d, Dense, DropoutFixed, MaxPoolOverTime, Relu, SoftmaxXent};
use crate::nn::{check_layer_randomized, GradCheckReport, Tensor};
use crate::text::{
    build_vocab, read_documents, write_documents, ConceptLexicon, Label, Vocabulary,
};
use crate::{Error, Result};

/// Every tunable parameter of the pipeline, with its default value.
///
/// Loaded from flat `key = value` files where `#` starts a comment, then
/// overridden by `--set key=value` flags and finally by named flags.
/// Unknown keys are rejected rather than silently ignored, so a typo in a
/// config file cannot run with defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Which channels the classifier uses: cnn, mcnn, kcnn, or kmcnn.
    pub variant: Variant,
    /// Token positions per document (pad or truncate to this length).
    pub n: usize,
    /// Word-vector width.
    pub dw: usize,
    /// Knowledge-vector width; 0 disables the knowledge block.
    pub dk: usize,
    /// Word-vector channels, 1 or 2.
    pub channels: usize,
    /// Convolution window sizes, comma separated in config files.
    pub filter_widths: Vec<usize>,
    /// Filters per window size (or a total budget, see below).
    pub filters_per_width: usize,
    /// Reinterpret `filters_per_width` as a total split evenly over widths.
    pub filters_count_is_total: bool,
    /// Dense hidden layer width.
    pub hidden_dim: usize,
    /// Dropout rate on hidden activations during training.
    pub drop_rate: f64,
    /// Adam learning rate for classifier training.
    pub learning_rate: f64,
    /// Classifier training epochs.
    pub epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Random walks started per node per walk kind.
    pub walks: usize,
    /// Steps per random walk.
    pub walk_length: usize,
    /// Structural-equivalence radius for signature-based walks.
    pub radius: f64,
    /// Concept-embedding dimension for skip-gram training.
    pub embed_dim: usize,
    /// Skip-gram context window.
    pub window: usize,
    /// Negative samples per skip-gram pair.
    pub negatives: usize,
    /// Skip-gram epochs over the walk corpus.
    pub embed_epochs: usize,
    /// Initial skip-gram learning rate.
    pub embed_learning_rate: f64,
    /// Minimum token count for vocabulary membership.
    pub min_count: usize,
    /// Keywords kept by frequency mining.
    pub keyword_count: usize,
    /// Validation share of pre-cutoff documents in asynchronous splits.
    pub val_fraction: f64,
    /// Train share in synchronous splits.
    pub train_ratio: f64,
    /// Validation share in synchronous splits.
    pub validation_ratio: f64,
    /// Test share in synchronous splits.
    pub test_ratio: f64,
    /// Date boundary for asynchronous splits.
    pub cutoff_date: NaiveDate,
    /// Master random seed; every random stream derives from it.
    pub seed: u64,
    /// Worker threads; 1 (the default) forces fully deterministic mode.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let model = ModelConfig::default();
        let walk = WalkConfig::default();
        let embed = SkipGramConfig::default();
        RunConfig {
            variant: Variant::Kmcnn,
            n: model.n,
            dw: model.dw,
            dk: model.dk,
            channels: model.channels,
            filter_widths: model.filter_widths.clone(),
            filters_per_width: model.filters_per_width,
            filters_count_is_total: model.filters_count_is_total,
            hidden_dim: model.hidden_dim,
            drop_rate: model.drop_rate,
            learning_rate: model.learning_rate,
            epochs: model.epochs,
            batch_size: model.batch_size,
            walks: walk.walks_per_node,
            walk_length: walk.walk_length,
            radius: walk.radius,
            embed_dim: embed.dim,
            window: embed.window,
            negatives: embed.negatives,
            embed_epochs: embed.epochs,
            embed_learning_rate: embed.learning_rate,
            min_count: 1,
            keyword_count: DEFAULT_KEYWORD_COUNT,
            val_fraction: 0.1,
            train_ratio: 0.8,
            validation_ratio: 0.1,
            test_ratio: 0.1,
            cutoff_date: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            seed: model.seed,
            threads: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}` expects a number, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "key `{key}` expects true or false, got `{other}`"
        ))),
    }
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| {
        Error::Config(format!(
            "key `{key}` expects a YYYY-MM-DD date, got `{value}`"
        ))
    })
}

fn parse_widths(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "key `filter_widths` expects comma-separated integers, got `{value}`"
                ))
            })
        })
        .collect()
}

impl RunConfig {
    /// Sets one key from its text value. The key names are exactly the
    /// ones [`RunConfig::to_config_string`] writes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = value.parse()?,
            "n" => self.n = parse_num(key, value)?,
            "dw" => self.dw = parse_num(key, value)?,
            "dk" => self.dk = parse_num(key, value)?,
            "channels" => self.channels = parse_num(key, value)?,
            "filter_widths" => self.filter_widths = parse_widths(value)?,
            "filters_per_width" => self.filters_per_width = parse_num(key, value)?,
            "filters_count_is_total" => self.filters_count_is_total = parse_bool(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, value)?,
            "drop_rate" => self.drop_rate = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "walks" => self.walks = parse_num(key, value)?,
            "walk_length" => self.walk_length = parse_num(key, value)?,
            "radius" => self.radius = parse_num(key, value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "negatives" => self.negatives = parse_num(key, value)?,
            "embed_epochs" => self.embed_epochs = parse_num(key, value)?,
            "embed_learning_rate" => self.embed_learning_rate = parse_num(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "keyword_count" => self.keyword_count = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            "train_ratio" => self.train_ratio = parse_num(key, value)?,
            "validation_ratio" => self.validation_ratio = parse_num(key, value)?,
            "test_ratio" => self.test_ratio = parse_num(key, value)?,
            "cutoff_date" => self.cutoff_date = parse_date(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines from a config file. `#` starts a
    /// comment; blank lines are skipped. Errors carry the line number.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, raw_line) in raw.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, "expected `key = value`"))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        Ok(())
    }

    /// Renders every key in a stable order, parseable by
    /// [`RunConfig::apply_file`]. This is what gets echoed next to outputs.
    pub fn to_config_string(&self) -> String {
        let widths: Vec<String> = self.filter_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "# effective configuration; lines are `key = value`, `#` starts a comment\n\
             variant = {}\n\
             n = {}\n\
             dw = {}\n\
             dk = {}\n\
             channels = {}\n\
             filter_widths = {}\n\
             filters_per_width = {}\n\
             filters_count_is_total = {}\n\
             hidden_dim = {}\n\
             drop_rate = {}\n\
             learning_rate = {}\n\
             epochs = {}\n\
             batch_size = {}\n\
             walks = {}\n\
             walk_length = {}\n\
             radius = {}\n\
             embed_dim = {}\n\
             window = {}\n\
             negatives = {}\n\
             embed_epochs = {}\n\
             embed_learning_rate = {}\n\
             min_count = {}\n\
             keyword_count = {}\n\
             val_fraction = {}\n\
             train_ratio = {}\n\
             validation_ratio = {}\n\
             test_ratio = {}\n\
             cutoff_date = {}\n\
             seed = {}\n\
             threads = {}\n",
            self.variant,
            self.n,
            self.dw,
            self.dk,
            self.channels,
            widths.join(","),
            self.filters_per_width,
            self.filters_count_is_total,
            self.hidden_dim,
            self.drop_rate,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.walks,
            self.walk_length,
            self.radius,
            self.embed_dim,
            self.window,
            self.negatives,
            self.embed_epochs,
            self.embed_learning_rate,
            self.min_count,
            self.keyword_count,
            self.val_fraction,
            self.train_ratio,
            self.validation_ratio,
            self.test_ratio,
            self.cutoff_date.format("%Y-%m-%d"),
            self.seed,
            self.threads,
        )
    }

    /// The classifier configuration with the ablation variant applied.
    pub fn model_config(&self) -> ModelConfig {
        let base = ModelConfig {
            n: self.n,
            dw: self.dw,
            dk: self.dk,
            channels: self.channels,
            filter_widths: self.filter_widths.clone(),
            filters_per_width: self.filters_per_width,
            filters_count_is_total: self.filters_count_is_total,
            hidden_dim: self.hidden_dim,
            drop_rate: self.drop_rate,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        };
        crate::model::ablation_variant(&base, self.variant)
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            walks_per_node: self.walks,
            walk_length: self.walk_length,
            radius: self.radius,
            seed: self.seed,
        }
    }

    pub fn skipgram_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.embed_dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.embed_epochs,
            learning_rate: self.embed_learning_rate,
            seed: self.seed,
            threads: self.threads,
        }
    }

    /// Copies the model block from a concrete [`ModelConfig`], used when
    /// echoing the configuration a checkpoint was trained with.
    fn sync_model(&mut self, cfg: &ModelConfig) {
        self.variant = variant_for(cfg);
        self.n = cfg.n;
        self.dw = cfg.dw;
        self.dk = cfg.dk;
        self.channels = cfg.channels;
        self.filter_widths = cfg.filter_widths.clone();
        self.filters_per_width = cfg.filters_per_width;
        self.filters_count_is_total = cfg.filters_count_is_total;
        self.hidden_dim = cfg.hidden_dim;
        self.drop_rate = cfg.drop_rate;
        self.learning_rate = cfg.learning_rate;
        self.epochs = cfg.epochs;
        self.batch_size = cfg.batch_size;
        self.seed = cfg.seed;
    }
}

/// Recovers the ablation variant from a model configuration. The mapping
/// is invertible: the variant is exactly (channel count, knowledge
/// block on or off).
fn variant_for(cfg: &ModelConfig) -> Variant {
    match (cfg.channels, cfg.dk > 0) {
        (1, false) => Variant::PlainCnn,
        (2, false) => Variant::Mcnn,
        (1, true) => Variant::Kcnn,
        _ => Variant::Kmcnn,
    }
}

#[derive(Parser)]
#[command(
    name = "kmcnn",
    version,
    about = "Knowledge-aware literature triage: graph walks, concept embeddings, \
             dataset construction, training, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random-walk corpus from a concept graph
    KgWalk(KgWalkArgs),
    /// Train concept embeddings on a walk corpus (skip-gram)
    KgEmbed(KgEmbedArgs),
    /// Dataset construction: splits, negative sampling, keyword mining
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the document classifier
    Train(TrainArgs),
    /// Score documents with a saved checkpoint
    Predict(PredictArgs),
    /// Compare predictions against gold labels
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every data-processing subcommand.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 forces fully deterministic mode
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Some(path) = &self.config {
            run.apply_file(path)?;
        }
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            run.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            run.seed = seed;
        }
        if let Some(threads) = self.threads {
            run.threads = threads;
        }
        Ok(run)
    }
}

#[derive(Args)]
struct KgWalkArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory holding concepts.tsv and edges.tsv
    #[arg(long, value_name = "DIR")]
    graph: Option<PathBuf>,
    /// Concept vocabulary TSV (id, name, semantic type); overrides --graph
    #[arg(long, value_name = "FILE")]
    concepts: Option<PathBuf>,
    /// Undirected edge list TSV; overrides --graph
    #[arg(long, value_name = "FILE")]
    edges: Option<PathBuf>,
    /// Output walk-corpus file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Walks started per node per walk kind
    #[arg(long)]
    walks: Option<usize>,
    /// Steps per walk
    #[arg(long)]
    length: Option<usize>,
    /// Structural-equivalence radius
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct KgEmbedArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Walk-corpus file produced by kg-walk
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Output embedding file (word2vec text format)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Embedding dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Context window
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per pair
    #[arg(long)]
    negatives: Option<usize>,
    /// Epochs over the corpus
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate
    #[arg(long, value_name = "RATE")]
    learning_rate: Option<f64>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Partition labeled documents into train/validation/test
    Split(SplitArgs),
    /// Draw negative documents from a candidate pool
    Negsample(NegsampleArgs),
    /// Mine the most frequent non-stopword keywords from positives
    Keywords(KeywordsArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Labeled documents, one JSON object per line
    #[arg(long, value_name = "FILE")]
    docs: PathBuf,
    /// `synchronous` (random by ratio) or `asynchronous` (by date cutoff)
    #[arg(long)]
    strategy: String,
    /// Output manifest path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Date boundary for asynchronous splits (YYYY-MM-DD)
    #[arg(long, value_name = "DATE")]
    cutoff: Option<String>,
    /// Validation share of pre-cutoff documents (asynchronous)
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Train share (synchronous)
    #[arg(long)]
    train_ratio: Option<f64>,
    /// Validation share (synchronous)
    #[arg(long)]
    validation_ratio: Option<f64>,
    /// Test share (synchronous)
    #[arg(long)]
    test_ratio: Option<f64>,
}

#[derive(Args)]
struct NegsampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Candidate pool documents (JSON lines)
    #[arg(long, value_name = "FILE")]
    pool: PathBuf,
    /// Positive documents (JSON lines)
    #[arg(long, value_name = "FILE")]
    positives: PathBuf,
    /// Number of negatives to draw
    #[arg(long)]
    count: usize,
    /// `random` or `ambiguous` (keyword/lexicon-matched hard negatives)
    #[arg(long, default_value = "random")]
    mode: String,
    /// Gene lexicon TSV, required for ambiguous mode
    #[arg(long, value_name = "FILE")]
    genes: Option<PathBuf>,
    /// Disease lexicon TSV, required for ambiguous mode
    #[arg(long, value_name = "FILE")]
    diseases: Option<PathBuf>,
    /// Output documents (JSON lines), labeled negative
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct KeywordsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Positive documents (JSON lines)
    #[arg(long, value_name = "FILE")]
    positives: PathBuf,
    /// How many keywords to keep
    #[arg(long)]
    k: Option<usize>,
    /// Output file, one keyword per line
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Labeled documents (JSON lines)
    #[arg(long, value_name = "FILE")]
    docs: PathBuf,
    /// Split manifest from `dataset split`
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Concept lexicon TSV (phrase, concept id)
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    /// Word-vector file, once per channel
    #[arg(long = "word-vectors", value_name = "FILE")]
    word_vectors: Vec<PathBuf>,
    /// Concept-embedding file from kg-embed
    #[arg(long, value_name = "FILE")]
    knowledge_vectors: Option<PathBuf>,
    /// Embedding file format: text or binary
    #[arg(long, default_value = "text")]
    vector_format: String,
    /// Output directory for model.ckpt, history.csv, vocab.txt, config.txt
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Model variant: cnn, mcnn, kcnn, or kmcnn
    #[arg(long)]
    variant: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long, value_name = "RATE")]
    learning_rate: Option<f64>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint written by train
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Documents to score (JSON lines)
    #[arg(long, value_name = "FILE")]
    docs: PathBuf,
    /// Vocabulary file written by train
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Concept lexicon TSV, same one used at training time
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    /// Word-vector file, once per channel
    #[arg(long = "word-vectors", value_name = "FILE")]
    word_vectors: Vec<PathBuf>,
    /// Concept-embedding file from kg-embed
    #[arg(long, value_name = "FILE")]
    knowledge_vectors: Option<PathBuf>,
    /// Embedding file format: text or binary
    #[arg(long, default_value = "text")]
    vector_format: String,
    /// Output predictions TSV: pmid, label, positive-class score
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Predictions TSV from predict
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Gold labeled documents (JSON lines)
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Output directory for metrics.csv and report.txt
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Master random seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Random trials per component
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Sequence length of the full-model check
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Word-embedding width
    #[arg(long, default_value_t = 8)]
    dw: usize,
    /// Knowledge-embedding width
    #[arg(long, default_value_t = 4)]
    dk: usize,
    /// Word channels
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Filters per window size
    #[arg(long, default_value_t = 4)]
    filters: usize,
    /// Hidden layer width
    #[arg(long, default_value_t = 8)]
    hidden: usize,
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .try_init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::KgWalk(args) => cmd_kg_walk(args),
        Command::KgEmbed(args) => cmd_kg_embed(args),
        Command::Dataset(DatasetCommand::Split(args)) => cmd_split(args),
        Command::Dataset(DatasetCommand::Negsample(args)) => cmd_negsample(args),
        Command::Dataset(DatasetCommand::Keywords(args)) => cmd_keywords(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

/// `foo/bar.txt` echoes its configuration to `foo/bar.txt.config`.
fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".config");
    PathBuf::from(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn echo_config_beside(out: &Path, run: &RunConfig) -> Result<()> {
    write_text(&sidecar_path(out), &run.to_config_string())
}

fn echo_config_inside(dir: &Path, run: &RunConfig) -> Result<()> {
    write_text(&dir.join("config.txt"), &run.to_config_string())
}

fn graph_paths(
    graph: Option<&Path>,
    concepts: Option<PathBuf>,
    edges: Option<PathBuf>,
) -> Result<(PathBuf, PathBuf)> {
    let concepts = concepts.or_else(|| graph.map(|g| g.join("concepts.tsv")));
    let edges = edges.or_else(|| graph.map(|g| g.join("edges.tsv")));
    match (concepts, edges) {
        (Some(c), Some(e)) => Ok((c, e)),
        _ => Err(Error::Validation(
            "pass --graph DIR, or both --concepts and --edges".into(),
        )),
    }
}

fn cmd_kg_walk(args: KgWalkArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    if let Some(v) = args.walks {
        run.walks = v;
    }
    if let Some(v) = args.length {
        run.walk_length = v;
    }
    if let Some(v) = args.radius {
        run.radius = v;
    }
    let (concepts, edges) = graph_paths(args.graph.as_deref(), args.concepts, args.edges)?;
    let graph = KnowledgeGraph::load(&concepts, &edges)?;
    let corpus = generate_corpus(&graph, &run.walk_config())?;
    corpus.write_to(&args.out)?;
    echo_config_beside(&args.out, &run)?;
    println!(
        "wrote {} walks over {} concepts to {}",
        corpus.len(),
        graph.concept_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_kg_embed(args: KgEmbedArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    if let Some(v) = args.dim {
        run.embed_dim = v;
    }
    if let Some(v) = args.window {
        run.window = v;
    }
    if let Some(v) = args.negatives {
        run.negatives = v;
    }
    if let Some(v) = args.epochs {
        run.embed_epochs = v;
    }
    if let Some(v) = args.learning_rate {
        run.embed_learning_rate = v;
    }
    let corpus = WalkCorpus::load(&args.corpus)?;
    let output = train_skipgram(&corpus, &run.skipgram_config())?;
    save_embeddings(&output.embeddings, &args.out)?;
    echo_config_beside(&args.out, &run)?;
    let final_loss = output.epoch_loss.last().copied().unwrap_or(0.0);
    println!(
        "embedded {} tokens at dimension {} ({} epochs, final loss {:.4}) into {}",
        output.embeddings.vocab_size(),
        output.embeddings.dim(),
        run.embed_epochs,
        final_loss,
        args.out.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    if let Some(v) = &args.cutoff {
        run.cutoff_date = parse_date("cutoff_date", v)?;
    }
    if let Some(v) = args.val_fraction {
        run.val_fraction = v;
    }
    if let Some(v) = args.train_ratio {
        run.train_ratio = v;
    }
    if let Some(v) = args.validation_ratio {
        run.validation_ratio = v;
    }
    if let Some(v) = args.test_ratio {
        run.test_ratio = v;
    }
    let docs = read_documents(&args.docs)?;
    let manifest = match args.strategy.as_str() {
        "synchronous" => synchronous_split(
            &docs,
            (run.train_ratio, run.validation_ratio, run.test_ratio),
            run.seed,
        )?,
        "asynchronous" => asynchronous_split(&docs, run.cutoff_date, run.val_fraction, run.seed)?,
        other => {
            return Err(Error::Validation(format!(
                "unknown strategy `{other}`; expected synchronous or asynchronous"
            )))
        }
    };
    manifest.write(&args.out)?;
    echo_config_beside(&args.out, &run)?;
    let (train, val, test) = manifest.sizes();
    println!(
        "split {} documents into train {train} / validation {val} / test {test} ({})",
        docs.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_negsample(args: NegsampleArgs) -> Result<()> {
    let run = args.config.resolve()?;
    let pool = read_documents(&args.pool)?;
    let positives = read_documents(&args.positives)?;
    let negatives = match args.mode.as_str() {
        "random" => negative_sample_random(&pool, args.count, &positives, run.seed)?,
        "ambiguous" => {
            let (genes, diseases) = match (&args.genes, &args.diseases) {
                (Some(g), Some(d)) => (g, d),
                _ => {
                    return Err(Error::Validation(
                        "ambiguous mode needs --genes and --diseases lexicons".into(),
                    ))
                }
            };
            let gene_lexicon = ConceptLexicon::load(genes)?;
            let disease_lexicon = ConceptLexicon::load(diseases)?;
            let spec = NegativeSampleSpec {
                pool: &pool,
                count: args.count,
                gene_lexicon: &gene_lexicon,
                disease_lexicon: &disease_lexicon,
                keyword_count: run.keyword_count,
                seed: run.seed,
            };
            negative_sample_ambiguous(&spec, &positives)?
        }
        other => {
            return Err(Error::Validation(format!(
                "unknown mode `{other}`; expected random or ambiguous"
            )))
        }
    };
    write_documents(&args.out, &negatives)?;
    echo_config_beside(&args.out, &run)?;
    println!(
        "sampled {} negative documents ({} mode) into {}",
        negatives.len(),
        args.mode,
        args.out.display()
    );
    Ok(())
}

fn cmd_keywords(args: KeywordsArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    if let Some(k) = args.k {
        run.keyword_count = k;
    }
    let positives = read_documents(&args.positives)?;
    let keywords = keyword_top_k(&positives, run.keyword_count)?;
    let mut text = String::new();
    for kw in &keywords {
        text.push_str(kw);
        text.push('\n');
    }
    write_text(&args.out, &text)?;
    echo_config_beside(&args.out, &run)?;
    println!(
        "kept {} keywords from {} positive documents ({})",
        keywords.len(),
        positives.len(),
        args.out.display()
    );
    Ok(())
}

fn load_channels(paths: &[PathBuf], format: VectorFormat) -> Result<Vec<EmbeddingMatrix>> {
    paths
        .iter()
        .map(|p| load_word_vectors(p, format))
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    if let Some(v) = &args.variant {
        run.variant = v.parse()?;
    }
    if let Some(v) = args.epochs {
        run.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        run.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        run.batch_size = v;
    }
    let format: VectorFormat = args.vector_format.parse()?;

    let docs = read_documents(&args.docs)?;
    let manifest = SplitManifest::read(&args.manifest)?;
    let (train_refs, val_refs, _test_refs) = manifest.partition(&docs)?;
    let train_docs: Vec<_> = train_refs.into_iter().cloned().collect();
    let val_docs: Vec<_> = val_refs.into_iter().cloned().collect();

    // The vocabulary comes from the training split alone so validation and
    // test text cannot leak into it.
    let vocab = build_vocab(&train_docs, run.min_count)?;
    let lexicon = ConceptLexicon::load(&args.lexicon)?;
    let channels = load_channels(&args.word_vectors, format)?;
    let knowledge = args
        .knowledge_vectors
        .as_ref()
        .map(|p| load_word_vectors(p, format))
        .transpose()?;

    let mut cfg = run.model_config();
    // The embedding files are the authority on vector widths; the config
    // keys only matter when no files are in play (gradcheck).
    if let Some(first) = channels.first() {
        cfg.dw = first.dim();
    }
    if cfg.dk > 0 {
        match &knowledge {
            Some(k) => cfg.dk = k.dim(),
            None => {
                return Err(Error::Validation(format!(
                    "variant {} uses knowledge vectors; pass --knowledge-vectors",
                    run.variant
                )))
            }
        }
    }
    let channel_refs: Vec<&EmbeddingMatrix> = channels.iter().collect();
    let set = EmbeddingSet::build(&cfg, &vocab, &lexicon, &channel_refs, knowledge.as_ref())?;

    let train_enc = encode_labeled(&train_docs, &vocab, &lexicon, cfg.n)?;
    let val_enc = encode_labeled(&val_docs, &vocab, &lexicon, cfg.n)?;
    let input = TrainInput {
        train: &train_enc,
        validation: &val_enc,
        embeddings: &set,
        vocab_hash: vocab.content_hash(),
        lexicon_hash: lexicon.content_hash(),
    };
    let outcome = crate::model::train(&input, &cfg)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    outcome.checkpoint.save(&args.out_dir.join("model.ckpt"))?;
    write_history_csv(&args.out_dir.join("history.csv"), &outcome.history)?;
    vocab.save(&args.out_dir.join("vocab.txt"))?;
    run.sync_model(&outcome.checkpoint.config);
    echo_config_inside(&args.out_dir, &run)?;

    if let Some(last) = outcome.history.last() {
        let best = outcome
            .history
            .iter()
            .map(|e| e.val_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "trained {} epochs (variant {}); final loss {:.6}, best validation F1 {:.3} ({})",
            last.epoch,
            run.variant,
            last.train_loss,
            best,
            args.out_dir.display()
        );
    } else {
        println!(
            "wrote initialized model without training ({})",
            args.out_dir.display()
        );
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut run = args.config.resolve()?;
    let format: VectorFormat = args.vector_format.parse()?;
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let lexicon = ConceptLexicon::load(&args.lexicon)?;
    let channels = load_channels(&args.word_vectors, format)?;
    let knowledge = args
        .knowledge_vectors
        .as_ref()
        .map(|p| load_word_vectors(p, format))
        .transpose()?;
    let channel_refs: Vec<&EmbeddingMatrix> = channels.iter().collect();
    let set = EmbeddingSet::build(
        &ckpt.config,
        &vocab,
        &lexicon,
        &channel_refs,
        knowledge.as_ref(),
    )?;
    let docs = read_documents(&args.docs)?;
    let preds = crate::model::predict(&ckpt, &docs, &vocab, &lexicon, &set)?;
    write_predictions(
        &args.out,
        preds.iter().map(|p| (p.pmid.as_str(), p.label, p.score)),
    )?;
    run.sync_model(&ckpt.config);
    echo_config_beside(&args.out, &run)?;
    let positive = preds.iter().filter(|p| p.label == Label::Positive).count();
    println!(
        "scored {} documents ({} positive) into {}",
        preds.len(),
        positive,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = args.config.resolve()?;
    let preds = read_predictions(&args.predictions)?;
    let gold_docs = read_documents(&args.gold)?;
    let gold: Vec<(String, Label)> = gold_docs
        .iter()
        .map(|d| {
            d.label
                .map(|l| (d.pmid.clone(), l))
                .ok_or_else(|| Error::Data(format!("gold document {} has no label", d.pmid)))
        })
        .collect::<Result<_>>()?;
    let pred_labels: Vec<(String, Label)> =
        preds.iter().map(|(p, l, _)| (p.clone(), *l)).collect();
    let counts = confusion(&pred_labels, &gold)?;
    let metrics = precision_recall_f1(&counts);

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let csv = format!(
        "precision,recall,f1\n{},{},{}\n",
        format_percent(metrics.precision),
        format_percent(metrics.recall),
        format_percent(metrics.f1),
    );
    write_text(&args.out_dir.join("metrics.csv"), &csv)?;
    let report = format!(
        "documents        {}\n\
         true positives   {}\n\
         false positives  {}\n\
         false negatives  {}\n\
         true negatives   {}\n\
         precision        {}\n\
         recall           {}\n\
         f1               {}\n",
        counts.total(),
        counts.true_pos,
        counts.false_pos,
        counts.false_neg,
        counts.true_neg,
        format_percent(metrics.precision),
        format_percent(metrics.recall),
        format_percent(metrics.f1),
    );
    write_text(&args.out_dir.join("report.txt"), &report)?;
    echo_config_inside(&args.out_dir, &run)?;
    println!(
        "precision {} recall {} f1 {} over {} documents ({})",
        format_percent(metrics.precision),
        format_percent(metrics.recall),
        format_percent(metrics.f1),
        counts.total(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let k = args.dw + args.dk;
    let trials = args.trials;
    let eps = args.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut failures: Vec<String> = Vec::new();

    let record = |report: &GradCheckReport, failures: &mut Vec<String>| {
        let status = if report.passed() { "ok" } else { "FAILED" };
        println!(
            "{:<14} max rel err {:>10.3e} over {:>6} components  {}",
            report.layer, report.max_rel_err, report.components_checked, status
        );
        if !report.passed() {
            failures.push(format!("{} (worst at {})", report.layer, report.worst));
        }
    };

    let hidden = args.hidden;
    let filters = args.filters;
    let n = args.n;

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            let layer = Dense::new(hidden, 2, &mut r);
            let input = Tensor::uniform(&[hidden], -1.0, 1.0, &mut r);
            (layer, input)
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            let layer = Conv1d::new(filters, 2, k, &mut r);
            let input = Tensor::uniform(&[n, k], -1.0, 1.0, &mut r);
            (layer, input)
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (Relu::new(), Tensor::uniform(&[hidden], -1.0, 1.0, &mut r))
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (
                MaxPoolOverTime::new(),
                Tensor::uniform(&[n, filters], -1.0, 1.0, &mut r),
            )
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            let layer = DropoutFixed::new(hidden, 0.5, &mut r).expect("rate 0.5 is valid");
            (layer, Tensor::uniform(&[hidden], -1.0, 1.0, &mut r))
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (SoftmaxXent::new(1), Tensor::uniform(&[2], -2.0, 2.0, &mut r))
        },
        trials,
        eps,
        &mut rng,
    )?;
    record(&report, &mut failures);

    let cfg = ModelConfig {
        n: args.n,
        dw: args.dw,
        dk: args.dk,
        channels: args.channels,
        filter_widths: vec![1, 2, 3],
        filters_per_width: args.filters,
        filters_count_is_total: false,
        hidden_dim: args.hidden,
        drop_rate: 0.5,
        seed: args.seed,
        ..ModelConfig::default()
    };
    let model_report = check_model_gradients(&cfg, trials, eps, args.seed)?;
    let ok = model_report.max_rel_err < REL_ERR_TOLERANCE;
    println!(
        "{:<14} max rel err {:>10.3e} over {:>6} components  {}",
        "full model",
        model_report.max_rel_err,
        model_report.components,
        if ok { "ok" } else { "FAILED" }
    );
    if !ok {
        failures.push(format!("full model (worst at {})", model_report.worst));
    }

    if failures.is_empty() {
        println!("all gradients within tolerance {REL_ERR_TOLERANCE:.0e}");
        Ok(())
    } else {
        Err(Error::GradCheck(format!(
            "relative error exceeded {REL_ERR_TOLERANCE:.0e} in: {}",
            failures.join(", ")
        )))
    }
}
