#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentvec::classifier::{ClfArch, ConvNet, Encoded, LabeledSentence, NUM_LABELS};
use sentvec::nn::Parameters;
use sentvec::regressor::{RegressionNet, Sample};
use sentvec::train::{cbow_update, DenseRows, ExactLogistic, Scratch};
use sentvec::prep::tokenize;
use sentvec::{similarity, EmbeddingModel, TrainConfig};

pub const FD_EPS: f64 = 1e-4;
/// Denominator floor of the relative error, so coordinates whose true
/// gradient is (numerically) zero compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;
pub const FD_COORDS: usize = 100;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Coordinates `(tensor, index)` spread round-robin over the tensors; the
/// optional filter restricts the candidate indices of a tensor.
pub fn pick_coords<P: Parameters>(
    params: &P,
    n: usize,
    rng: &mut ChaCha8Rng,
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let candidates: Vec<Vec<usize>> = params
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, x)| (0..x.len()).filter(|&i| allowed(t, i)).collect())
        .collect();
    let live: Vec<usize> = (0..candidates.len()).filter(|&t| !candidates[t].is_empty()).collect();
    (0..n)
        .map(|k| {
            let t = live[k % live.len()];
            (t, *candidates[t].choose(rng).unwrap())
        })
        .collect()
}

/// Largest relative error between `grad` and central differences of `loss`.
pub fn fd_max_rel<P: Parameters + Clone>(
    params: &P,
    grad: &P,
    coords: &[(usize, usize)],
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &(t, i) in coords {
        let mut plus = params.clone();
        plus.tensors_mut()[t][i] += FD_EPS;
        let mut minus = params.clone();
        minus.tensors_mut()[t][i] -= FD_EPS;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(grad.tensors()[t][i], numeric));
    }
    worst
}

/// Input and output matrices of the embedding model, in `f64`.
#[derive(Clone, Debug)]
pub struct CbowParams {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl Parameters for CbowParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.input, &self.output]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.input, &mut self.output]
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x.abs()).exp().ln_1p() + (-x).max(0.0))
}

/// Reference negative-sampling loss written from the definition.
pub fn cbow_loss(p: &CbowParams, dim: usize, features: &[u32], target: u32, negatives: &[u32]) -> f64 {
    let mut h = vec![0.0; dim];
    for &f in features {
        for k in 0..dim {
            h[k] += p.input[f as usize * dim + k] / features.len() as f64;
        }
    }
    let score = |w: u32| (0..dim).map(|k| h[k] * p.output[w as usize * dim + k]).sum::<f64>();
    -log_sigmoid(score(target)) - negatives.iter().map(|&n| log_sigmoid(-score(n))).sum::<f64>()
}

/// Finite-difference check of the trainer update on a random instance with
/// `dim = 8`, `V = 20` and a few n-gram buckets.
pub fn trainer_gradient_check(seed: u64) -> f64 {
    let (dim, vocab, buckets) = (8, 20, 12);
    let mut r = rng(seed);
    let params = CbowParams {
        input: (0..(vocab + buckets) * dim).map(|_| r.random_range(-0.5..0.5)).collect(),
        output: (0..vocab * dim).map(|_| r.random_range(-0.5..0.5)).collect(),
    };
    let mut features: Vec<u32> = (0..5).map(|_| r.random_range(0..vocab as u32)).collect();
    features.extend((0..3).map(|_| vocab as u32 + r.random_range(0..buckets as u32)));
    let mut others: Vec<u32> = (0..vocab as u32).collect();
    others.shuffle(&mut r);
    let target = others[0];
    let negatives = others[1..6].to_vec();

    // With lr = 1 the update moves every parameter by minus its gradient.
    let mut after = params.clone();
    cbow_update(
        &mut DenseRows::new(&mut after.input, dim),
        &mut DenseRows::new(&mut after.output, dim),
        &features,
        target,
        &negatives,
        1.0f64,
        &ExactLogistic,
        &mut Scratch::new(dim),
    );
    let grad = CbowParams {
        input: params.input.iter().zip(&after.input).map(|(a, b)| a - b).collect(),
        output: params.output.iter().zip(&after.output).map(|(a, b)| a - b).collect(),
    };
    let in_rows: BTreeSet<usize> = features.iter().map(|&f| f as usize).collect();
    let out_rows: BTreeSet<usize> = negatives.iter().chain([&target]).map(|&w| w as usize).collect();
    let coords = pick_coords(&params, FD_COORDS, &mut r, |t, i| {
        if t == 0 {
            in_rows.contains(&(i / dim))
        } else {
            out_rows.contains(&(i / dim))
        }
    });
    fd_max_rel(&params, &grad, &coords, |p| cbow_loss(p, dim, &features, target, &negatives))
}

/// Reference objective of the regressor, from evaluation-mode predictions.
pub fn reg_objective(net: &RegressionNet, batch: &[Sample], l2: f64) -> f64 {
    let mse = batch
        .iter()
        .map(|s| (net.predict(&s.features) - s.target).powi(2))
        .sum::<f64>()
        / batch.len() as f64;
    let norm: f64 = net.layers().iter().flat_map(|l| &l.weights).map(|w| w * w).sum();
    mse + l2 * norm
}

pub fn random_samples(n: usize, inputs: usize, r: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            features: (0..inputs).map(|_| r.random_range(-1.0..1.0)).collect(),
            target: r.random_range(0.0..5.0),
        })
        .collect()
}

/// Finite-difference check of the regressor (dropout off, with L2) for
/// 3-dimensional sentence vectors and the standard hidden layers.
pub fn regressor_gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let net = RegressionNet::new(3, seed).unwrap();
    let batch = random_samples(4, net.input_len(), &mut r);
    let l2 = 1e-3;
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut grad = net.zeros_like();
    net.loss_and_grad(&refs, l2, false, &mut r, &mut grad);
    let coords = pick_coords(&net, FD_COORDS, &mut r, |_, _| true);
    fd_max_rel(&net, &grad, &coords, |n| reg_objective(n, &batch, l2))
}

pub fn tiny_clf_arch() -> ClfArch {
    ClfArch {
        embed_dim: 6,
        filters: 4,
        window: 3,
        dense: vec![8],
        use_sentvec: true,
    }
}

/// Reference mean binary cross-entropy from predicted probabilities.
pub fn clf_objective(net: &ConvNet, batch: &[Encoded]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        for (p, y) in net.predict_proba(ex).into_iter().zip(ex.targets) {
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    total / (batch.len() * NUM_LABELS) as f64
}

/// Finite-difference check of the classifier on a tiny tagged net.
pub fn classifier_gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    let tags = [["NN", "VB", "DT"], ["B-NP", "I-NP", "O"]];
    let sentences: Vec<LabeledSentence> = (0..4)
        .map(|k| {
            let len = 2 + k * 2;
            let toks: Vec<&str> = (0..len).map(|_| *words.choose(&mut r).unwrap()).collect();
            let text = toks.join(" ");
            let tg: [Vec<String>; 2] =
                std::array::from_fn(|c| (0..len).map(|_| tags[c].choose(&mut r).unwrap().to_string()).collect());
            LabeledSentence {
                tokens: tokenize(&text),
                text,
                labels: [k % 10, (k * 3 + 1) % 10].into_iter().collect(),
                tags: Some(tg),
            }
        })
        .collect();
    let mut net = ConvNet::new(tiny_clf_arch(), &sentences, 5, seed).unwrap();
    // move the biases off zero so inactive units are rare
    for t in net.tensors_mut().into_iter().skip(2).step_by(2) {
        t.iter_mut().for_each(|b| *b = r.random_range(0.0..0.3));
    }
    let batch: Vec<Encoded> = sentences
        .iter()
        .map(|s| {
            let v: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            net.encode(s, &v).unwrap()
        })
        .collect();
    let refs: Vec<&Encoded> = batch.iter().collect();
    let mut grad = net.zeros_like();
    net.loss_and_grad(&refs, &mut grad);
    let used: BTreeSet<usize> = batch.iter().flat_map(|e| e.words.iter().map(|&w| w as usize)).collect();
    let d = net.arch().embed_dim;
    let coords = pick_coords(&net, FD_COORDS, &mut r, |t, i| t != 0 || used.contains(&(i / d)));
    fd_max_rel(&net, &grad, &coords, |n| clf_objective(n, &batch))
}

/// Sentences over two disjoint 50-word topic vocabularies mixed with 20
/// shared function words. Returns the sentences and their topic.
pub fn two_topic_sentences(n: usize, seed: u64) -> Vec<(Vec<String>, usize)> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let topic = i % 2;
            let len = r.random_range(8..=14);
            let words = (0..len)
                .map(|_| {
                    if r.random_bool(0.35) {
                        format!("fn{}", r.random_range(0..20))
                    } else {
                        format!("{}{}", ["alpha", "omega"][topic], r.random_range(0..50))
                    }
                })
                .collect();
            (words, topic)
        })
        .collect()
}

pub fn write_corpus(dir: &Path, name: &str, sentences: &[(Vec<String>, usize)]) -> PathBuf {
    let path = dir.join(name);
    let text: String = sentences.iter().map(|(w, _)| w.join(" ") + "\n").collect();
    fs::write(&path, text).unwrap();
    path
}

pub fn separation_config() -> TrainConfig {
    TrainConfig {
        dim: 50,
        epochs: 5,
        min_count: 1,
        subsample: false,
        bucket_count: 20_000,
        negatives: 5,
        window: 10,
        workers: 1,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Mean within-topic cosine minus mean cross-topic cosine over all pairs of
/// the given sentences.
pub fn topic_separation(model: &EmbeddingModel, sentences: &[(Vec<String>, usize)]) -> f64 {
    let vecs: Vec<(Vec<f32>, usize)> = sentences
        .iter()
        .map(|(w, t)| (model.sentence_vector(w), *t))
        .collect();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let s = similarity(&vecs[i].0, &vecs[j].0);
            if vecs[i].1 == vecs[j].1 {
                within += s;
                nw += 1;
            } else {
                cross += s;
                nc += 1;
            }
        }
    }
    within / nw as f64 - cross / nc as f64
}

/// Sentences of filler words, each containing the marker trigram of every
/// one of its labels (one or two labels per sentence).
pub fn marker_sentences(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let mut labels = BTreeSet::from([i % 10]);
            if r.random_bool(0.4) {
                labels.insert(r.random_range(0..10));
            }
            let mut toks: Vec<String> = (0..r.random_range(6..=12))
                .map(|_| format!("filler{}", r.random_range(0..30)))
                .collect();
            for &l in &labels {
                let at = r.random_range(0..=toks.len());
                for (k, part) in ["mka", "mkb", "mkc"].iter().enumerate() {
                    toks.insert(at + k, format!("{part}{l}"));
                }
            }
            let text = toks.join(" ");
            LabeledSentence {
                tokens: tokenize(&text),
                text,
                labels,
                tags: None,
            }
        })
        .collect()
}

/// Brute-force example-based metrics, computed with explicit loops over
/// label ids.
pub fn brute_metrics(pred: &[BTreeSet<usize>], gold: &[BTreeSet<usize>]) -> (f64, f64, f64) {
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (yh, y) in pred.iter().zip(gold) {
        let mut both = 0;
        for l in 0..10 {
            if yh.contains(&l) && y.contains(&l) {
                both += 1;
            }
        }
        let both = both as f64;
        p += if yh.is_empty() { 0.0 } else { both / yh.len() as f64 };
        r += both / y.len() as f64;
        f += 2.0 * both / (yh.len() + y.len()) as f64;
    }
    let n = pred.len() as f64;
    (p / n, r / n, f / n)
}

pub fn random_label_set(r: &mut ChaCha8Rng, allow_empty: bool) -> BTreeSet<usize> {
    loop {
        let s: BTreeSet<usize> = (0..10).filter(|_| r.random_bool(0.25)).collect();
        if allow_empty || !s.is_empty() {
            return s;
        }
    }
}

/// Pearson correlation from raw sums,
/// `(n Sxy - Sx Sy) / sqrt((n Sxx - Sx^2) (n Syy - Sy^2))`.
pub fn pearson_reference(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// A model with the given word rows (in order of decreasing count), zero
/// n-gram rows and zero output matrix.
pub fn hand_model(rows: &[(&str, Vec<f32>)]) -> EmbeddingModel {
    let dim = rows[0].1.len();
    let buckets = 4;
    let entries = rows
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), (rows.len() - i) as u64))
        .collect();
    let vocab = sentvec::vocab::Vocabulary::from_counts(entries, 1, 1e-4).unwrap();
    let hasher = sentvec::vocab::NgramHasher::new(2, buckets, rows.len() as u32).unwrap();
    let mut input: Vec<f32> = rows.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    input.resize((rows.len() + buckets as usize) * dim, 0.0);
    let config = TrainConfig {
        dim: dim as u32,
        bucket_count: buckets,
        min_count: 1,
        ..TrainConfig::default()
    };
    EmbeddingModel::from_parts(vocab, hasher, config, input, vec![0.0; rows.len() * dim]).unwrap()
}
