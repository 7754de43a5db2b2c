//! Multi-label sentence classifier: a convolution over token embeddings
//! (optionally with one-hot tag channels), global max pooling, concatenation
//! with the sentence vector, and dense layers with sigmoid outputs. Also the
//! example-based precision/recall/F1 metrics.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Sidecar;
use crate::model::EmbeddingModel;
use crate::nn::{relu_in_place, sigmoid, Adam, AdamConfig, Dense, Parameters};
use crate::prep::{prepare_sentence, tokenize, PrepConfig};

pub const NUM_LABELS: usize = 10;

const MAGIC: &[u8; 8] = b"SVECCLF\0";
const EMBED_INIT: f64 = 0.25;

/// A sentence with its gold labels and optional part-of-speech and chunk
/// tags (one per token of [`tokenize`]).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSentence {
    pub text: String,
    pub tokens: Vec<String>,
    pub labels: BTreeSet<usize>,
    pub tags: Option<[Vec<String>; 2]>,
}

/// Parse `sentence \t labels [\t pos-tags \t chunk-tags]` lines. Labels are
/// comma-separated ids in `0..10`; tags are space-separated.
pub fn parse_labeled(text: &str) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 && cols.len() != 4 {
            return Err(Error::parse(n, format!("expected 2 or 4 tab-separated columns, found {}", cols.len())));
        }
        let mut labels = BTreeSet::new();
        for l in cols[1].split(',').map(str::trim).filter(|l| !l.is_empty()) {
            let id: usize = l
                .parse()
                .map_err(|_| Error::parse(n, format!("invalid label {l:?}")))?;
            if id >= NUM_LABELS {
                return Err(Error::parse(n, format!("label {id} outside 0..{NUM_LABELS}")));
            }
            labels.insert(id);
        }
        if labels.is_empty() {
            return Err(Error::parse(n, "empty label set"));
        }
        let tokens = tokenize(cols[0]);
        let tags = if cols.len() == 4 {
            let pos: Vec<String> = cols[2].split_whitespace().map(String::from).collect();
            let chunk: Vec<String> = cols[3].split_whitespace().map(String::from).collect();
            if pos.len() != tokens.len() || chunk.len() != tokens.len() {
                return Err(Error::parse(
                    n,
                    format!(
                        "{} tokens but {} part-of-speech and {} chunk tags",
                        tokens.len(),
                        pos.len(),
                        chunk.len()
                    ),
                ));
            }
            Some([pos, chunk])
        } else {
            None
        };
        out.push(LabeledSentence {
            text: cols[0].to_string(),
            tokens,
            labels,
            tags,
        });
    }
    Ok(out)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })?;
    parse_labeled(&text)
}

/// Seeded shuffle, then contiguous 60/20/20 split at `floor(0.6n)` and
/// `floor(0.8n)`.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (a, b) = split_sizes(items.len());
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (pick(&idx[..a]), pick(&idx[a..b]), pick(&idx[b..]))
}

/// Split boundaries used by [`split_dataset`].
pub fn split_sizes(n: usize) -> (usize, usize) {
    (n * 3 / 5, n * 4 / 5)
}

/// Word vectors read from a text file: `word x1 .. xd` per line, with an
/// optional `count dim` header line.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        let v = values
            .iter()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(i + 1, "invalid number"))?;
        if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
            return Err(Error::parse(i + 1, "inconsistent vector length"));
        }
        out.insert(word.to_string(), v);
    }
    Ok(out)
}

/// Architecture of a [`ConvNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfArch {
    pub embed_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub dense: Vec<usize>,
    pub use_sentvec: bool,
}

impl Default for ClfArch {
    fn default() -> Self {
        ClfArch {
            embed_dim: 200,
            filters: 100,
            window: 3,
            dense: vec![256, 128],
            use_sentvec: true,
        }
    }
}

/// A sentence mapped to network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    /// Embedding rows; 0 is the unknown word.
    pub words: Vec<u32>,
    /// Tag ids per token, `None` for tags unseen in training. Empty when the
    /// net has no tag channels.
    pub tags: [Vec<Option<u32>>; 2],
    pub sentvec: Vec<f64>,
    pub targets: [f64; NUM_LABELS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    arch: ClfArch,
    sentvec_dim: usize,
    words: Vec<String>,
    word_index: HashMap<String, u32>,
    tag_sets: [Vec<String>; 2],
    tag_index: [HashMap<String, u32>; 2],
    /// `(1 + words) x embed_dim`, row 0 for unknown words.
    pub embeddings: Vec<f64>,
    pub conv: Dense,
    pub dense: Vec<Dense>,
}

impl Parameters for ConvNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = vec![&self.embeddings, &self.conv.weights, &self.conv.bias];
        for l in &self.dense {
            t.push(&l.weights);
            t.push(&l.bias);
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![&mut self.embeddings, &mut self.conv.weights, &mut self.conv.bias];
        for l in &mut self.dense {
            t.push(&mut l.weights);
            t.push(&mut l.bias);
        }
        t
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ClfTrace {
    windows: Vec<Vec<f64>>,
    conv_out: Vec<Vec<f64>>,
    /// Position holding each filter's maximum.
    pub argmax: Vec<usize>,
    pub pooled: Vec<f64>,
    dense_inputs: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn index_of(items: &[String]) -> HashMap<String, u32> {
    items
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect()
}

impl ConvNet {
    /// Build a net whose vocabularies come from `train`. Words are
    /// lowercased; rows follow descending frequency.
    pub fn new(arch: ClfArch, train: &[LabeledSentence], sentvec_dim: usize, seed: u64) -> Result<Self> {
        if arch.embed_dim == 0 || arch.filters == 0 || arch.window == 0 || arch.dense.contains(&0) {
            return Err(Error::InvalidConfig("architecture sizes must be positive".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for s in train {
            for t in &s.tokens {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        let mut words: Vec<(String, u64)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let words: Vec<String> = words.into_iter().map(|(w, _)| w).collect();

        let tag_sets: [Vec<String>; 2] = std::array::from_fn(|c| {
            let set: BTreeSet<&String> = train
                .iter()
                .filter_map(|s| s.tags.as_ref())
                .flat_map(|t| t[c].iter())
                .collect();
            set.into_iter().cloned().collect()
        });
        let sentvec_dim = if arch.use_sentvec { sentvec_dim } else { 0 };
        Ok(Self::with_vocab(arch, words, tag_sets, sentvec_dim, seed))
    }

    /// Build a net with explicit vocabularies.
    pub fn with_vocab(
        arch: ClfArch,
        words: Vec<String>,
        tag_sets: [Vec<String>; 2],
        sentvec_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channel = arch.embed_dim + tag_sets[0].len() + tag_sets[1].len();
        let embeddings = (0..(words.len() + 1) * arch.embed_dim)
            .map(|_| rng.random_range(-EMBED_INIT..EMBED_INIT))
            .collect();
        let conv = Dense::xavier(arch.window * channel, arch.filters, 0.0, &mut rng);
        let mut sizes = vec![arch.filters + sentvec_dim];
        sizes.extend_from_slice(&arch.dense);
        sizes.push(NUM_LABELS);
        let dense = sizes
            .windows(2)
            .map(|w| Dense::xavier(w[0], w[1], 0.0, &mut rng))
            .collect();
        ConvNet {
            word_index: words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.clone(), i as u32 + 1))
                .collect(),
            tag_index: [index_of(&tag_sets[0]), index_of(&tag_sets[1])],
            arch,
            sentvec_dim,
            words,
            tag_sets,
            embeddings,
            conv,
            dense,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn arch(&self) -> &ClfArch {
        &self.arch
    }

    pub fn sentvec_dim(&self) -> usize {
        self.sentvec_dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tag_sets(&self) -> &[Vec<String>; 2] {
        &self.tag_sets
    }

    pub fn has_tags(&self) -> bool {
        !self.tag_sets[0].is_empty() || !self.tag_sets[1].is_empty()
    }

    pub fn channel_dim(&self) -> usize {
        self.arch.embed_dim + self.tag_sets[0].len() + self.tag_sets[1].len()
    }

    pub fn word_id(&self, token: &str) -> u32 {
        self.word_index.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    /// Copy matching rows from pre-trained vectors; returns how many words
    /// were found.
    pub fn load_pretrained(&mut self, vectors: &HashMap<String, Vec<f64>>) -> Result<usize> {
        let d = self.arch.embed_dim;
        let mut found = 0;
        for (i, w) in self.words.iter().enumerate() {
            if let Some(v) = vectors.get(w) {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: v.len(),
                    });
                }
                self.embeddings[(i + 1) * d..(i + 2) * d].copy_from_slice(v);
                found += 1;
            }
        }
        Ok(found)
    }

    /// Map a sentence to network inputs. `sentvec` is ignored by nets built
    /// without the sentence-vector input.
    pub fn encode(&self, s: &LabeledSentence, sentvec: &[f64]) -> Result<Encoded> {
        let sentvec = if self.sentvec_dim == 0 {
            Vec::new()
        } else if sentvec.len() != self.sentvec_dim {
            return Err(Error::DimensionMismatch {
                expected: self.sentvec_dim,
                found: sentvec.len(),
            });
        } else {
            sentvec.to_vec()
        };
        let tags = match (&s.tags, self.has_tags()) {
            (Some(t), true) => std::array::from_fn(|c| t[c].iter().map(|x| self.tag_index[c].get(x).copied()).collect()),
            (None, true) => std::array::from_fn(|_| vec![None; s.tokens.len()]),
            (_, false) => [Vec::new(), Vec::new()],
        };
        let mut targets = [0.0; NUM_LABELS];
        for &l in &s.labels {
            targets[l] = 1.0;
        }
        Ok(Encoded {
            words: s.tokens.iter().map(|t| self.word_id(t)).collect(),
            tags,
            sentvec,
            targets,
        })
    }

    fn token_row(&self, ex: &Encoded, i: usize, out: &mut [f64]) {
        let d = self.arch.embed_dim;
        let w = ex.words[i] as usize;
        out[..d].copy_from_slice(&self.embeddings[w * d..(w + 1) * d]);
        let mut offset = d;
        for c in 0..2 {
            if let Some(Some(t)) = ex.tags[c].get(i) {
                out[offset + *t as usize] = 1.0;
            }
            offset += self.tag_sets[c].len();
        }
    }

    /// Token channels of every window position. Sentences shorter than the
    /// window are padded with zero vectors.
    fn windows(&self, ex: &Encoded) -> Vec<Vec<f64>> {
        let c = self.channel_dim();
        let k = self.arch.window;
        let n = ex.words.len().max(k);
        let mut rows = vec![0.0; n * c];
        for i in 0..ex.words.len() {
            self.token_row(ex, i, &mut rows[i * c..(i + 1) * c]);
        }
        (0..=n - k).map(|p| rows[p * c..(p + k) * c].to_vec()).collect()
    }

    pub fn forward(&self, ex: &Encoded) -> ClfTrace {
        let windows = self.windows(ex);
        let conv_out: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| {
                let mut z = self.conv.forward(w);
                relu_in_place(&mut z);
                z
            })
            .collect();
        let f = self.arch.filters;
        let mut argmax = vec![0; f];
        let mut pooled = vec![f64::NEG_INFINITY; f];
        for (p, out) in conv_out.iter().enumerate() {
            for j in 0..f {
                if out[j] > pooled[j] {
                    pooled[j] = out[j];
                    argmax[j] = p;
                }
            }
        }
        let mut a = pooled.clone();
        a.extend_from_slice(&ex.sentvec);
        let last = self.dense.len() - 1;
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        for layer in &self.dense[..last] {
            let mut z = layer.forward(&a);
            relu_in_place(&mut z);
            dense_inputs.push(std::mem::replace(&mut a, z));
        }
        let logits = self.dense[last].forward(&a);
        dense_inputs.push(a);
        ClfTrace {
            windows,
            conv_out,
            argmax,
            pooled,
            dense_inputs,
            logits,
        }
    }

    /// Per-label probabilities.
    pub fn predict_proba(&self, ex: &Encoded) -> Vec<f64> {
        self.forward(ex).logits.into_iter().map(sigmoid).collect()
    }

    /// Mean binary cross-entropy over the batch and the label outputs.
    pub fn loss(&self, batch: &[&Encoded]) -> f64 {
        let scale = 1.0 / (batch.len() * NUM_LABELS) as f64;
        batch
            .iter()
            .map(|ex| bce(&self.forward(ex).logits, &ex.targets))
            .sum::<f64>()
            * scale
    }

    /// Like [`ConvNet::loss`], also adding the gradient to `grad`.
    pub fn loss_and_grad(&self, batch: &[&Encoded], grad: &mut ConvNet) -> f64 {
        let scale = 1.0 / (batch.len() * NUM_LABELS) as f64;
        let mut loss = 0.0;
        for ex in batch {
            let t = self.forward(ex);
            loss += bce(&t.logits, &ex.targets) * scale;
            let mut g: Vec<f64> = t
                .logits
                .iter()
                .zip(&ex.targets)
                .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                .collect();
            for (i, layer) in self.dense.iter().enumerate().rev() {
                g = layer.backward(&t.dense_inputs[i], &g, &mut grad.dense[i]);
                if i > 0 {
                    g.iter_mut()
                        .zip(&t.dense_inputs[i])
                        .for_each(|(x, &a)| if a <= 0.0 { *x = 0.0 });
                }
            }
            self.backward_conv(ex, &t, &g[..self.arch.filters], grad);
        }
        loss
    }

    /// Route the pooled-vector gradient to the argmax window of each filter.
    fn backward_conv(&self, ex: &Encoded, t: &ClfTrace, g_pool: &[f64], grad: &mut ConvNet) {
        let f = self.arch.filters;
        let mut per_pos: Vec<Option<Vec<f64>>> = vec![None; t.windows.len()];
        for j in 0..f {
            let p = t.argmax[j];
            if t.conv_out[p][j] > 0.0 && g_pool[j] != 0.0 {
                per_pos[p].get_or_insert_with(|| vec![0.0; f])[j] = g_pool[j];
            }
        }
        let c = self.channel_dim();
        let d = self.arch.embed_dim;
        for (p, g) in per_pos.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let g_in = self.conv.backward(&t.windows[p], &g, &mut grad.conv);
            for k in 0..self.arch.window {
                let Some(&w) = ex.words.get(p + k) else { continue };
                let row = &mut grad.embeddings[w as usize * d..(w as usize + 1) * d];
                for (r, &x) in row.iter_mut().zip(&g_in[k * c..k * c + d]) {
                    *r += x;
                }
            }
        }
    }

    fn to_sidecar(&self) -> Sidecar {
        let a = &self.arch;
        let mut meta = vec![
            a.embed_dim as u32,
            a.filters as u32,
            a.window as u32,
            a.use_sentvec as u32,
            self.sentvec_dim as u32,
            self.words.len() as u32,
            self.tag_sets[0].len() as u32,
            self.tag_sets[1].len() as u32,
            a.dense.len() as u32,
        ];
        meta.extend(a.dense.iter().map(|&x| x as u32));
        let strings = self
            .words
            .iter()
            .chain(&self.tag_sets[0])
            .chain(&self.tag_sets[1])
            .cloned()
            .collect();
        Sidecar {
            meta,
            strings,
            tensors: self.tensors().into_iter().map(<[f64]>::to_vec).collect(),
        }
    }

    fn from_sidecar(sc: Sidecar) -> Result<Self> {
        let corrupt = || Error::Corrupt("classifier layout does not match its tensors".into());
        let m = &sc.meta;
        if m.len() < 9 || m.len() != 9 + m[8] as usize {
            return Err(corrupt());
        }
        let arch = ClfArch {
            embed_dim: m[0] as usize,
            filters: m[1] as usize,
            window: m[2] as usize,
            use_sentvec: m[3] != 0,
            dense: m[9..].iter().map(|&x| x as usize).collect(),
        };
        let (nw, np, nc) = (m[5] as usize, m[6] as usize, m[7] as usize);
        if sc.strings.len() != nw + np + nc {
            return Err(corrupt());
        }
        let mut strings = sc.strings.into_iter();
        let words: Vec<String> = strings.by_ref().take(nw).collect();
        let pos: Vec<String> = strings.by_ref().take(np).collect();
        let chunk: Vec<String> = strings.collect();
        if arch.embed_dim == 0 || arch.filters == 0 || arch.window == 0 || arch.dense.contains(&0) {
            return Err(corrupt());
        }
        let mut net = ConvNet::with_vocab(arch, words, [pos, chunk], m[4] as usize, 0);
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        if sc.tensors.len() != shapes.len() || sc.tensors.iter().zip(&shapes).any(|(t, &n)| t.len() != n) {
            return Err(corrupt());
        }
        for (dst, src) in net.tensors_mut().into_iter().zip(&sc.tensors) {
            dst.copy_from_slice(src);
        }
        Ok(net)
    }

    pub fn write_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        self.to_sidecar().write_to(MAGIC, writer)
    }

    pub fn read_from<R: std::io::Read>(reader: R) -> Result<Self> {
        Self::from_sidecar(Sidecar::read_from(MAGIC, reader, None)?)
    }

    /// Atomic save (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_sidecar().save(MAGIC, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_sidecar(Sidecar::load(MAGIC, path.as_ref())?)
    }
}

/// `sum_j softplus(z_j) - y_j z_j`, the cross-entropy of sigmoid outputs.
fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ClfHyper {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ClfHyper {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch: 64,
            patience: 10,
            max_epochs: 200,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl ClfHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("invalid Adam parameters");
        }
        if self.batch == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch, patience and max epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClfReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub dev_losses: Vec<f64>,
}

/// Train with Adam on mean binary cross-entropy. Stops once the dev loss
/// has not improved for `patience` epochs and returns the best-dev snapshot.
pub fn fit(mut net: ConvNet, train: &[Encoded], dev: &[Encoded], hyper: &ClfHyper) -> Result<(ConvNet, ClfReport)> {
    hyper.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidInput("training and development sets must be non-empty".into()));
    }
    let mut adam = Adam::new(hyper.adam(), &net);
    let mut grad = net.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let dev_refs: Vec<&Encoded> = dev.iter().collect();

    let mut best = (net.clone(), f64::INFINITY, 0);
    let mut dev_losses = Vec::new();
    let mut stale = 0;
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train[i]).collect();
            grad.zero();
            net.loss_and_grad(&batch, &mut grad);
            adam.step(&mut net, &grad);
        }
        let dev_loss = net.loss(&dev_refs);
        if !dev_loss.is_finite() {
            return Err(Error::InvalidInput(format!("training diverged at epoch {epoch}")));
        }
        dev_losses.push(dev_loss);
        log::debug!("epoch {epoch} dev_loss={dev_loss:.6}");
        if dev_loss < best.1 {
            best = (net.clone(), dev_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let report = ClfReport {
        epochs_run: dev_losses.len(),
        best_epoch: best.2,
        best_dev_loss: best.1,
        dev_losses,
    };
    Ok((best.0, report))
}

/// Sentence vectors (as `f64`) for every sentence.
pub fn sentence_vectors(model: &EmbeddingModel, sentences: &[LabeledSentence], prep: &PrepConfig) -> Vec<Vec<f64>> {
    sentences
        .iter()
        .map(|s| {
            model
                .sentence_vector(&prepare_sentence(&s.text, prep))
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect()
}

/// Encode sentences for `net`, computing sentence vectors from `model` when
/// the net uses them.
pub fn encode_all(
    net: &ConvNet,
    sentences: &[LabeledSentence],
    model: Option<&EmbeddingModel>,
    prep: &PrepConfig,
) -> Result<Vec<Encoded>> {
    if net.sentvec_dim() == 0 {
        return sentences.iter().map(|s| net.encode(s, &[])).collect();
    }
    let model = model.ok_or_else(|| Error::InvalidConfig("a sentence embedding model is required".into()))?;
    sentence_vectors(model, sentences, prep)
        .iter()
        .zip(sentences)
        .map(|(v, s)| net.encode(s, v))
        .collect()
}

/// Build, initialize and train a classifier.
pub fn train_classifier(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    model: Option<&EmbeddingModel>,
    prep: &PrepConfig,
    arch: &ClfArch,
    hyper: &ClfHyper,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
) -> Result<(ConvNet, ClfReport)> {
    hyper.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidInput("training and development sets must be non-empty".into()));
    }
    let sentvec_dim = match (arch.use_sentvec, model) {
        (true, Some(m)) => m.dim(),
        (true, None) => return Err(Error::InvalidConfig("a sentence embedding model is required".into())),
        (false, _) => 0,
    };
    let mut net = ConvNet::new(arch.clone(), train, sentvec_dim, hyper.seed)?;
    if let Some(v) = pretrained {
        let found = net.load_pretrained(v)?;
        log::info!("initialized {found} of {} word rows from pre-trained vectors", net.words().len());
    }
    let tr = encode_all(&net, train, model, prep)?;
    let dv = encode_all(&net, dev, model, prep)?;
    fit(net, &tr, &dv, hyper)
}

/// `{i : p_i >= threshold}`, or the single most probable label when that
/// set is empty.
pub fn predict_labels(probs: &[f64], threshold: f64) -> BTreeSet<usize> {
    let set: BTreeSet<usize> = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect();
    if !set.is_empty() || probs.is_empty() {
        return set;
    }
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
    BTreeSet::from([best])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Example-based precision, recall and F1, averaged over examples.
pub fn example_metrics(pred: &[BTreeSet<usize>], gold: &[BTreeSet<usize>]) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no examples".into()));
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (yh, y) in pred.iter().zip(gold) {
        if y.is_empty() {
            return Err(Error::InvalidInput("empty gold label set".into()));
        }
        let both = yh.intersection(y).count() as f64;
        if !yh.is_empty() {
            p += both / yh.len() as f64;
        }
        r += both / y.len() as f64;
        f += 2.0 * both / (y.len() + yh.len()) as f64;
    }
    let n = pred.len() as f64;
    Ok(Metrics {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    })
}

/// Predict every example and score against its gold labels.
pub fn evaluate(net: &ConvNet, examples: &[Encoded], threshold: f64) -> Result<Metrics> {
    let pred: Vec<BTreeSet<usize>> = examples
        .iter()
        .map(|e| predict_labels(&net.predict_proba(e), threshold))
        .collect();
    let gold: Vec<BTreeSet<usize>> = examples
        .iter()
        .map(|e| (0..NUM_LABELS).filter(|&i| e.targets[i] > 0.5).collect())
        .collect();
    example_metrics(&pred, &gold)
}
