use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sentvec::prep::{default_stopwords, load_stopwords, Granularity, PrepConfig};

#[derive(Debug, Parser)]
#[command(name = "sentvec", version, about = "Train, serve and evaluate sentence embeddings")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags given on the command
    /// line take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, tokenize and clean raw text into one sentence per line.
    Prep(PrepArgs),
    /// Count a preprocessed corpus and write the vocabulary.
    Vocab(VocabArgs),
    /// Train a sentence embedding model.
    Train(TrainArgs),
    /// Print sentence vectors, one line per sentence.
    Embed(EmbedArgs),
    /// Cosine similarity of two sentences.
    Sim(SimArgs),
    /// Unsupervised similarity evaluation (cosine vs gold, Pearson).
    EvalSim(EvalSimArgs),
    /// Train a similarity regressor on sentence pairs.
    TrainReg(TrainRegArgs),
    /// Supervised similarity evaluation.
    EvalReg(EvalRegArgs),
    /// Train a multi-label sentence classifier.
    TrainClf(TrainClfArgs),
    /// Evaluate a trained classifier.
    EvalClf(EvalClfArgs),
    /// Print a model's header.
    Info(InfoArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prep(_) => "prep",
            Command::Vocab(_) => "vocab",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::Sim(_) => "sim",
            Command::EvalSim(_) => "eval-sim",
            Command::TrainReg(_) => "train-reg",
            Command::EvalReg(_) => "eval-reg",
            Command::TrainClf(_) => "train-clf",
            Command::EvalClf(_) => "eval-clf",
            Command::Info(_) => "info",
        }
    }
}

pub const SUBCOMMANDS: [&str; 11] = [
    "prep", "vocab", "train", "embed", "sim", "eval-sim", "train-reg", "eval-reg", "train-clf", "eval-clf", "info",
];

/// Text cleaning options shared by every command that reads raw sentences.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PrepOpts {
    /// Keep the original letter case.
    #[arg(long)]
    pub keep_case: bool,
    /// Do not remove stopwords.
    #[arg(long)]
    pub no_stopword_removal: bool,
    /// Keep punctuation tokens.
    #[arg(long)]
    pub keep_punctuation: bool,
    /// Stopword list, one word per line (replaces the bundled list).
    #[arg(long, value_name = "FILE")]
    pub stopwords: Option<PathBuf>,
    /// Truncate sentences longer than this many tokens.
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
}

impl PrepOpts {
    pub fn to_config(&self) -> sentvec::Result<PrepConfig> {
        let stopwords = if self.no_stopword_removal {
            Default::default()
        } else if let Some(p) = &self.stopwords {
            load_stopwords(p)?
        } else {
            default_stopwords()
        };
        let cfg = PrepConfig {
            lowercase: !self.keep_case,
            stopwords,
            strip_punctuation: !self.keep_punctuation,
            max_sentence_tokens: self.max_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PrepArgs {
    /// Raw text files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Whether each input line is a document or a single sentence.
    #[arg(long, default_value = "doc")]
    pub granularity: Granularity,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct VocabArgs {
    /// Preprocessed corpus files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Vocabulary TSV (word, count), most frequent first.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub t: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Preprocessed corpus files (one sentence per line).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 700)]
    pub dim: u32,
    /// Longest word n-gram used as a feature.
    #[arg(long, default_value_t = 2)]
    pub ngrams: u32,
    /// Negatives per target.
    #[arg(long, default_value_t = 10)]
    pub neg: u32,
    #[arg(long, default_value_t = 30)]
    pub window: u32,
    #[arg(long, default_value_t = 5)]
    pub epochs: u32,
    /// Initial learning rate (decays linearly to 0).
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    /// Subsampling threshold.
    #[arg(long, default_value_t = 1e-4)]
    pub t: f64,
    /// Disable frequency subsampling.
    #[arg(long)]
    pub no_subsample: bool,
    /// Number of n-gram hash buckets.
    #[arg(long, default_value_t = 2_000_000)]
    pub bucket: u32,
    /// Worker threads; 1 gives bit-reproducible models.
    #[arg(long, default_value_t = 1)]
    pub workers: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Context n-grams dropped at random per target.
    #[arg(long, default_value_t = 0)]
    pub ngram_dropout: u32,
    /// Exact logistic instead of the lookup table.
    #[arg(long)]
    pub exact_math: bool,
    /// Tokens between progress lines.
    #[arg(long, default_value_t = 100_000)]
    pub progress_interval: u64,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    pub fn train_config(&self) -> sentvec::TrainConfig {
        sentvec::TrainConfig {
            dim: self.dim,
            ngram_order: self.ngrams,
            negatives: self.neg,
            window: self.window,
            epochs: self.epochs,
            lr0: self.lr,
            min_count: self.min_count,
            subsample_t: self.t,
            subsample: !self.no_subsample,
            bucket_count: self.bucket,
            workers: self.workers,
            seed: self.seed,
            ngram_dropout_k: self.ngram_dropout,
            exact_math: self.exact_math,
            progress_interval: self.progress_interval,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentence to embed (repeatable); standard input is read when absent.
    #[arg(long)]
    pub sentence: Vec<String>,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SimArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub s1: String,
    #[arg(long)]
    pub s2: String,
    #[command(flatten)]
    pub prep: PrepOpts,
}

/// Where an evaluation report goes besides standard output.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportOpts {
    /// Human-readable table instead of JSON.
    #[arg(long)]
    pub pretty: bool,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalSimArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pair TSV: sentence1, sentence2, score.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Also report Pearson within each of this many stratified folds.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegOpts {
    #[arg(long, default_value_t = 1500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long)]
    pub no_dropout: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RegOpts {
    pub fn hyper(&self) -> sentvec::regressor::RegHyper {
        sentvec::regressor::RegHyper {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            l2: self.l2,
            seed: self.seed,
            dropout: !self.no_dropout,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainRegArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Validation pairs; 20% of the training pairs are held out when absent.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Regressor file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub hyper: RegOpts,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalRegArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pairs to evaluate (the training set under `--test`).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Fixed split: train on `--pairs`, score on this file.
    #[arg(long, conflicts_with = "net")]
    pub test: Option<PathBuf>,
    /// Cross-validation folds when no test file is given.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Score an already trained regressor on `--pairs` instead of training.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: RegOpts,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClfOpts {
    #[arg(long, default_value_t = 200)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub filters: usize,
    /// Convolution window in tokens.
    #[arg(long, default_value_t = 3)]
    pub conv_window: usize,
    /// Hidden dense layer widths.
    #[arg(long, value_delimiter = ',', default_value = "256,128")]
    pub dense: Vec<usize>,
    /// Drop the sentence-vector input.
    #[arg(long)]
    pub no_sentvec: bool,
    #[arg(long, default_value_t = 7e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ClfOpts {
    pub fn arch(&self) -> sentvec::classifier::ClfArch {
        sentvec::classifier::ClfArch {
            embed_dim: self.embed_dim,
            filters: self.filters,
            window: self.conv_window,
            dense: self.dense.clone(),
            use_sentvec: !self.no_sentvec,
        }
    }

    pub fn hyper(&self) -> sentvec::classifier::ClfHyper {
        sentvec::classifier::ClfHyper {
            lr: self.lr,
            batch: self.batch,
            patience: self.patience,
            max_epochs: self.max_epochs,
            threshold: self.threshold,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainClfArgs {
    /// Labelled TSV split 60/20/20 into train/dev/test by `--seed`.
    #[arg(long, conflicts_with_all = ["train", "dev"], required_unless_present = "train")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "dev")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub dev: Option<PathBuf>,
    /// Test file scored after training (with `--train`/`--dev`).
    #[arg(long, conflicts_with = "data")]
    pub test: Option<PathBuf>,
    /// Sentence embedding model (required unless `--no-sentvec`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Pretrained word vectors for the embedding layer (text format).
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
    /// Classifier file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub clf: ClfOpts,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalClfArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sentence embedding model, when the classifier uses sentence vectors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Score one part of the 60/20/20 split of `--data` instead of all of it.
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Seed of the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub prep: PrepOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct InfoArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub pretty: bool,
}
