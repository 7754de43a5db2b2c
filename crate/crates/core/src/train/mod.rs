//! Sentence-level CBOW training with negative sampling.
//!
//! Every retained word of a sentence is predicted from the other retained
//! words within `window` positions, enriched with the hashed n-grams of
//! that context sequence. Workers stream disjoint byte ranges of the input
//! files and update the shared matrices without locks; with one worker the
//! run is bit-for-bit reproducible.

mod kernel;
mod logistic;
mod sampler;

use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::vocab::{NgramHasher, VocabBuilder, Vocabulary};

pub use kernel::{as_shared, cbow_update, DenseRows, RowStore, Scratch, SharedRows};
pub use logistic::{AnyLogistic, ExactLogistic, Logistic, SigmoidTable};
pub use sampler::NegativeSampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: u32,
    pub ngram_order: u32,
    pub negatives: u32,
    /// Context cap: at most this many retained positions on each side.
    pub window: u32,
    pub epochs: u32,
    pub lr0: f64,
    pub min_count: u64,
    pub subsample_t: f64,
    /// Apply frequency subsampling to targets and context.
    pub subsample: bool,
    pub bucket_count: u32,
    pub workers: u32,
    pub seed: u64,
    /// Number of context n-grams dropped at random per target.
    pub ngram_dropout_k: u32,
    /// Use `exp`-based logistic instead of the lookup table.
    pub exact_math: bool,
    /// Report progress every this many tokens (per first worker).
    pub progress_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 700,
            ngram_order: 2,
            negatives: 10,
            window: 30,
            epochs: 5,
            lr0: 0.2,
            min_count: 5,
            subsample_t: 1e-4,
            subsample: true,
            bucket_count: 2_000_000,
            workers: 1,
            seed: 0,
            ngram_dropout_k: 0,
            exact_math: false,
            progress_interval: 100_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim as u64),
            ("ngram order", self.ngram_order as u64),
            ("window", self.window as u64),
            ("epochs", self.epochs as u64),
            ("workers", self.workers as u64),
            ("min count", self.min_count),
            ("progress interval", self.progress_interval),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.ngram_order > 1 && self.bucket_count == 0 {
            return Err(Error::InvalidConfig("bucket count must be positive".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        if !(self.subsample_t.is_finite() && self.subsample_t > 0.0) {
            return Err(Error::InvalidConfig("subsampling threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Fresh model: input rows uniform in (-1/d, 1/d), output rows zero.
pub fn init_model(vocab: Vocabulary, hasher: NgramHasher, config: &TrainConfig) -> Result<EmbeddingModel> {
    if hasher.vocab_size() as usize != vocab.len() {
        return Err(Error::InvalidConfig("hasher vocabulary size differs from vocabulary".into()));
    }
    let dim = config.dim as usize;
    let bound = 1.0 / config.dim as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input = (0..hasher.rows() * dim)
        .map(|_| loop {
            let x = rng.random_range(-bound..bound);
            if x.abs() < bound {
                break x;
            }
        })
        .collect();
    let output = vec![0f32; vocab.len() * dim];
    let mut config = config.clone();
    config.bucket_count = hasher.bucket_count();
    config.ngram_order = hasher.ngram_order();
    config.min_count = vocab.min_count();
    config.subsample_t = vocab.subsample_t();
    EmbeddingModel::from_parts(vocab, hasher, config, input, output)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Number of target positions updated.
    pub examples: u64,
}

/// Per-worker training state for single sentences.
pub struct SentenceTrainer<'a> {
    vocab: &'a Vocabulary,
    hasher: NgramHasher,
    negatives: usize,
    window: usize,
    subsample: bool,
    dropout_k: usize,
    logistic: AnyLogistic,
    scratch: Scratch<f32>,
    kept: Vec<u32>,
    context: Vec<u32>,
    ngrams: Vec<u32>,
    negs: Vec<u32>,
}

impl<'a> SentenceTrainer<'a> {
    pub fn new(vocab: &'a Vocabulary, hasher: NgramHasher, config: &TrainConfig) -> Self {
        SentenceTrainer {
            vocab,
            hasher,
            negatives: config.negatives as usize,
            window: config.window as usize,
            subsample: config.subsample,
            dropout_k: config.ngram_dropout_k as usize,
            logistic: AnyLogistic::new(config.exact_math),
            scratch: Scratch::new(config.dim as usize),
            kept: Vec::new(),
            context: Vec::new(),
            ngrams: Vec::new(),
            negs: Vec::new(),
        }
    }

    /// Train on one sentence of in-vocabulary ids. Sentences with fewer than
    /// two positions left after subsampling are skipped.
    pub fn step<I, O, R>(
        &mut self,
        input: &mut I,
        output: &mut O,
        ids: &[u32],
        lr: f32,
        sampler: &NegativeSampler,
        rng: &mut R,
    ) -> StepOutcome
    where
        I: RowStore<f32>,
        O: RowStore<f32>,
        R: Rng,
    {
        self.kept.clear();
        if self.subsample {
            for &id in ids {
                if rng.random::<f64>() >= self.vocab.discard_prob(id) {
                    self.kept.push(id);
                }
            }
        } else {
            self.kept.extend_from_slice(ids);
        }
        if self.kept.len() < 2 {
            return StepOutcome::default();
        }

        let mut outcome = StepOutcome::default();
        for p in 0..self.kept.len() {
            let target = self.kept[p];
            let lo = p.saturating_sub(self.window);
            let hi = (p + self.window + 1).min(self.kept.len());

            self.context.clear();
            self.context.extend_from_slice(&self.kept[lo..p]);
            self.context.extend_from_slice(&self.kept[p + 1..hi]);
            self.ngrams.clear();
            self.hasher.extend_ngram_ids(&self.context, &mut self.ngrams);
            for _ in 0..self.dropout_k.min(self.ngrams.len()) {
                let i = rng.random_range(0..self.ngrams.len());
                self.ngrams.swap_remove(i);
            }
            self.context.extend_from_slice(&self.ngrams);

            self.negs.clear();
            for _ in 0..self.negatives {
                if let Some(n) = sampler.sample(rng, target) {
                    self.negs.push(n);
                }
            }

            outcome.loss += cbow_update(
                input,
                output,
                &self.context,
                target,
                &self.negs,
                lr,
                &self.logistic,
                &mut self.scratch,
            );
            outcome.examples += 1;
        }
        outcome
    }
}

/// Train a model in place on one sentence, with the hyperparameters stored
/// in its header. Returns the summed loss.
pub fn train_step<R: Rng>(
    model: &mut EmbeddingModel,
    ids: &[u32],
    lr: f32,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> f64 {
    let dim = model.dim();
    let config = model.header.train_config.clone();
    let mut trainer = SentenceTrainer::new(&model.vocab, model.hasher, &config);
    let mut input = DenseRows::new(&mut model.input, dim);
    let mut output = DenseRows::new(&mut model.output, dim);
    trainer
        .step(&mut input, &mut output, ids, lr, sampler, rng)
        .loss
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    /// Tokens processed by all workers so far.
    pub tokens: u64,
    pub lr: f64,
    /// Mean loss per target since the previous report.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean loss per target, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Learning rates observed at each progress report.
    pub lr_trace: Vec<f64>,
    pub tokens_processed: u64,
    pub examples: u64,
    pub seconds: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })
}

/// Count whitespace-separated tokens of sentence-per-line files.
pub fn corpus_vocab<P: AsRef<Path>>(inputs: &[P], min_count: u64, subsample_t: f64) -> Result<Vocabulary> {
    let mut builder = VocabBuilder::new();
    let mut line = String::new();
    for path in inputs {
        let mut reader = BufReader::new(open(path.as_ref())?);
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            builder.count(&line.split_whitespace().collect::<Vec<_>>());
        }
    }
    builder.build(min_count, subsample_t)
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Shard {
    path: PathBuf,
    start: u64,
    end: u64,
}

/// Split every input into `workers` byte ranges, shuffle them with the run
/// seed and deal them out round-robin.
fn plan_shards<P: AsRef<Path>>(inputs: &[P], workers: usize, seed: u64) -> Result<Vec<Vec<Shard>>> {
    let mut shards = Vec::new();
    for path in inputs {
        let path = path.as_ref();
        let len = open(path)?.metadata()?.len();
        for i in 0..workers as u64 {
            let start = len * i / workers as u64;
            let end = len * (i + 1) / workers as u64;
            if end > start {
                shards.push(Shard {
                    path: path.to_owned(),
                    start,
                    end,
                });
            }
        }
    }
    if inputs.len() > 1 || workers > 1 {
        shards.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5348_4152_4453));
    }
    let mut plan = vec![Vec::new(); workers];
    for (i, s) in shards.into_iter().enumerate() {
        plan[i % workers].push(s);
    }
    Ok(plan)
}

/// Call `f` on each line whose first byte lies in `[start, end)`.
fn for_each_line(shard: &Shard, mut f: impl FnMut(&str)) -> Result<()> {
    let mut reader = BufReader::with_capacity(1 << 16, open(&shard.path)?);
    let mut pos = shard.start;
    let mut buf = Vec::new();
    if shard.start > 0 {
        reader.seek(SeekFrom::Start(shard.start - 1))?;
        pos = shard.start - 1 + reader.read_until(b'\n', &mut buf)? as u64;
    }
    while pos < shard.end {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        pos += n as u64;
        f(&String::from_utf8_lossy(&buf));
    }
    Ok(())
}

struct RunState<'a> {
    vocab: &'a Vocabulary,
    hasher: NgramHasher,
    config: &'a TrainConfig,
    sampler: NegativeSampler,
    total_work: f64,
    processed: AtomicU64,
    epochs: Mutex<Vec<(f64, u64)>>,
    lr_trace: Mutex<Vec<f64>>,
    observer: &'a (dyn Fn(&Progress) + Sync),
}

impl RunState<'_> {
    fn lr_at(&self, processed: u64) -> f64 {
        self.config.lr0 * (1.0 - processed as f64 / self.total_work).max(0.0)
    }

    fn run_worker<I, O>(&self, worker: usize, shards: &[Shard], input: &mut I, output: &mut O) -> Result<()>
    where
        I: RowStore<f32>,
        O: RowStore<f32>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(worker as u64);
        let mut trainer = SentenceTrainer::new(self.vocab, self.hasher, self.config);
        let mut ids = Vec::new();
        let reporting = worker == 0;
        let (mut since_report, mut report_loss, mut report_examples) = (0u64, 0f64, 0u64);

        for epoch in 0..self.config.epochs as usize {
            let (mut epoch_loss, mut epoch_examples) = (0f64, 0u64);
            for shard in shards {
                for_each_line(shard, |line| {
                    ids.clear();
                    ids.extend(line.split_whitespace().filter_map(|t| self.vocab.id(t)));
                    if ids.is_empty() {
                        return;
                    }
                    let before = self.processed.fetch_add(ids.len() as u64, Ordering::Relaxed);
                    let lr = self.lr_at(before);
                    let out = trainer.step(input, output, &ids, lr as f32, &self.sampler, &mut rng);
                    epoch_loss += out.loss;
                    epoch_examples += out.examples;

                    if reporting {
                        since_report += ids.len() as u64;
                        report_loss += out.loss;
                        report_examples += out.examples;
                        if since_report >= self.config.progress_interval {
                            self.report(before + ids.len() as u64, lr, report_loss, report_examples);
                            since_report = 0;
                            report_loss = 0.0;
                            report_examples = 0;
                        }
                    }
                })?;
            }
            let mut epochs = self.epochs.lock().unwrap();
            epochs[epoch].0 += epoch_loss;
            epochs[epoch].1 += epoch_examples;
        }
        if reporting {
            let processed = self.processed.load(Ordering::Relaxed);
            self.report(processed, self.lr_at(processed), report_loss, report_examples);
        }
        Ok(())
    }

    fn report(&self, tokens: u64, lr: f64, loss: f64, examples: u64) {
        self.lr_trace.lock().unwrap().push(lr);
        let loss = if examples > 0 { loss / examples as f64 } else { 0.0 };
        (self.observer)(&Progress { tokens, lr, loss });
    }
}

/// Train on preprocessed sentence-per-line files.
pub fn train<P: AsRef<Path>>(inputs: &[P], config: &TrainConfig) -> Result<(EmbeddingModel, TrainReport)> {
    train_with_progress(inputs, config, &|_| {})
}

pub fn train_with_progress<P: AsRef<Path>>(
    inputs: &[P],
    config: &TrainConfig,
    observer: &(dyn Fn(&Progress) + Sync),
) -> Result<(EmbeddingModel, TrainReport)> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("no input files".into()));
    }
    let started = Instant::now();
    let vocab = corpus_vocab(inputs, config.min_count, config.subsample_t)?;
    log::info!("vocabulary: {} words, {} tokens", vocab.len(), vocab.total_tokens());
    let hasher = NgramHasher::new(config.ngram_order, config.bucket_count, vocab.len() as u32)?;
    let mut model = init_model(vocab, hasher, config)?;
    let workers = config.workers as usize;
    let plan = plan_shards(inputs, workers, config.seed)?;

    let EmbeddingModel {
        ref vocab,
        ref hasher,
        ref mut input,
        ref mut output,
        ..
    } = model;
    let state = RunState {
        vocab,
        hasher: *hasher,
        config,
        sampler: NegativeSampler::new(vocab.counts())?,
        total_work: (config.epochs as u64 * vocab.total_tokens()).max(1) as f64,
        processed: AtomicU64::new(0),
        epochs: Mutex::new(vec![(0.0, 0); config.epochs as usize]),
        lr_trace: Mutex::new(Vec::new()),
        observer,
    };
    let dim = config.dim as usize;

    if workers == 1 {
        let mut inp = DenseRows::new(input, dim);
        let mut out = DenseRows::new(output, dim);
        state.run_worker(0, &plan[0], &mut inp, &mut out)?;
    } else {
        let shared_in = as_shared(input);
        let shared_out = as_shared(output);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .iter()
                .enumerate()
                .map(|(w, shards)| {
                    let state = &state;
                    scope.spawn(move || {
                        let mut inp = SharedRows::new(shared_in, dim);
                        let mut out = SharedRows::new(shared_out, dim);
                        state.run_worker(w, shards, &mut inp, &mut out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }

    let epochs = state.epochs.into_inner().unwrap();
    let report = TrainReport {
        epoch_losses: epochs
            .iter()
            .map(|&(l, n)| if n > 0 { l / n as f64 } else { 0.0 })
            .collect(),
        lr_trace: state.lr_trace.into_inner().unwrap(),
        tokens_processed: state.processed.into_inner(),
        examples: epochs.iter().map(|e| e.1).sum(),
        seconds: started.elapsed().as_secs_f64(),
    };
    if model.input.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("training diverged (non-finite parameters); lower the learning rate".into()));
    }
    Ok((model, report))
}
