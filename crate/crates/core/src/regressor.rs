//! Supervised sentence-pair similarity: pair features built from two
//! sentence vectors, fed to a ReLU regressor trained by minibatch SGD.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Sidecar;
use crate::model::EmbeddingModel;
use crate::nn::{relu_in_place, sgd_step, Dense, Parameters};
use crate::prep::PrepConfig;
use crate::sts::{embed_pairs, pearson, stratified_folds, PairDataset};

pub const HIDDEN: [usize; 3] = [256, 128, 64];
pub const BIAS_INIT: f64 = 0.01;
pub const DROPOUT_RATE: f64 = 0.5;
pub const VALIDATION_FRACTION: f64 = 0.2;

const MAGIC: &[u8; 8] = b"SVECREG\0";

/// `[u; v; |u - v|; u * v; u . v]`, length `4d + 1`.
pub fn pair_features(u: &[f32], v: &[f32]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let d = u.len();
    let mut out = Vec::with_capacity(4 * d + 1);
    out.extend(u.iter().map(|&x| x as f64));
    out.extend(v.iter().map(|&x| x as f64));
    out.extend(u.iter().zip(v).map(|(&a, &b)| (a as f64 - b as f64).abs()));
    out.extend(u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64));
    out.push(u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum());
    Ok(out)
}

/// One training or evaluation example for the regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

/// Feature vectors and gold scores for every pair of `dataset`.
pub fn pair_samples(model: &EmbeddingModel, dataset: &PairDataset, prep: &PrepConfig) -> Result<Vec<Sample>> {
    embed_pairs(model, dataset, prep)
        .iter()
        .zip(&dataset.pairs)
        .map(|((u, v), p)| {
            Ok(Sample {
                features: pair_features(u, v)?,
                target: p.score,
            })
        })
        .collect()
}

/// Dense ReLU regressor with an identity output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionNet {
    layers: Vec<Dense>,
}

impl Parameters for RegressionNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights[..], &l.bias[..]])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights[..], &mut l.bias[..]])
            .collect()
    }
}

/// Activations kept for backpropagation.
struct Trace {
    /// Input to each layer, after activation and dropout.
    inputs: Vec<Vec<f64>>,
    /// Per hidden unit: 0 when dropped or inactive, else the survivor scale.
    gates: Vec<Vec<f64>>,
    output: f64,
}

impl RegressionNet {
    /// The standard network for `dim`-dimensional sentence vectors.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        Ok(Self::with_hidden(4 * dim + 1, &HIDDEN, seed))
    }

    /// Xavier-normal weights and constant biases for arbitrary layer widths.
    pub fn with_hidden(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| Dense::xavier(w[0], w[1], BIAS_INIT, &mut rng))
            .collect();
        RegressionNet { layers }
    }

    pub fn zeros_like(&self) -> Self {
        RegressionNet {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn trace<R: Rng + ?Sized>(&self, x: &[f64], dropout: bool, rng: &mut R) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(last);
        let mut a = x.to_vec();
        for layer in &self.layers[..last] {
            let mut z = layer.forward(&a);
            let gate: Vec<f64> = z
                .iter()
                .map(|&v| {
                    let keep = !dropout || rng.random::<f64>() >= DROPOUT_RATE;
                    match (v > 0.0, keep) {
                        (true, true) if dropout => 1.0 / (1.0 - DROPOUT_RATE),
                        (true, true) => 1.0,
                        _ => 0.0,
                    }
                })
                .collect();
            relu_in_place(&mut z);
            z.iter_mut().zip(&gate).for_each(|(v, g)| *v = if *g == 0.0 { 0.0 } else { *v * g });
            inputs.push(std::mem::replace(&mut a, z));
            gates.push(gate);
        }
        let output = self.layers[last].forward(&a)[0];
        inputs.push(a);
        Trace { inputs, gates, output }
    }

    /// Prediction for one feature vector. In training mode each hidden
    /// activation is dropped with probability 0.5 and survivors are doubled.
    pub fn forward<R: Rng + ?Sized>(&self, features: &[f64], train_mode: bool, rng: &mut R) -> f64 {
        self.trace(features, train_mode, rng).output
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut a = features.to_vec();
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            a = layer.forward(&a);
            relu_in_place(&mut a);
        }
        self.layers[last].forward(&a)[0]
    }

    pub fn predict_all(&self, samples: &[Sample]) -> Vec<f64> {
        samples.iter().map(|s| self.predict(&s.features)).collect()
    }

    pub fn mse(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples
            .iter()
            .map(|s| (self.predict(&s.features) - s.target).powi(2))
            .sum::<f64>()
            / samples.len() as f64
    }

    pub fn squared_weight_norm(&self) -> f64 {
        self.layers.iter().map(Dense::squared_weight_norm).sum()
    }

    /// Batch objective `mean((y_hat - y)^2) + l2 * sum(W^2)` (biases are not
    /// penalized). Adds its gradient to `grad` and returns its value.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &[&Sample],
        l2: f64,
        dropout: bool,
        rng: &mut R,
        grad: &mut RegressionNet,
    ) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            let t = self.trace(&s.features, dropout, rng);
            let err = t.output - s.target;
            loss += err * err * scale;
            let mut g = vec![2.0 * err * scale];
            for (i, layer) in self.layers.iter().enumerate().rev() {
                if i == 0 {
                    layer.backward_params(&t.inputs[0], &g, &mut grad.layers[0]);
                    break;
                }
                g = layer.backward(&t.inputs[i], &g, &mut grad.layers[i]);
                g.iter_mut().zip(&t.gates[i - 1]).for_each(|(x, m)| *x *= m);
            }
        }
        if l2 > 0.0 {
            for (layer, gl) in self.layers.iter().zip(&mut grad.layers) {
                for (gw, &w) in gl.weights.iter_mut().zip(&layer.weights) {
                    *gw += 2.0 * l2 * w;
                }
            }
            loss += l2 * self.squared_weight_norm();
        }
        loss
    }

    fn to_sidecar(&self) -> Sidecar {
        let mut meta = vec![self.layers.len() as u32];
        for l in &self.layers {
            meta.push(l.inputs as u32);
            meta.push(l.outputs as u32);
        }
        Sidecar {
            meta,
            strings: Vec::new(),
            tensors: self.tensors().into_iter().map(<[f64]>::to_vec).collect(),
        }
    }

    fn from_sidecar(sc: Sidecar) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        let (&n, shapes) = sc.meta.split_first().ok_or_else(|| corrupt("missing layer count"))?;
        let n = n as usize;
        if n == 0 || shapes.len() != 2 * n || sc.tensors.len() != 2 * n {
            return Err(corrupt("layer table does not match tensors"));
        }
        let mut layers = Vec::with_capacity(n);
        let mut tensors = sc.tensors.into_iter();
        for (i, s) in shapes.chunks_exact(2).enumerate() {
            let (inputs, outputs) = (s[0] as usize, s[1] as usize);
            let weights = tensors.next().unwrap();
            let bias = tensors.next().unwrap();
            if weights.len() != inputs * outputs || bias.len() != outputs || inputs == 0 || outputs == 0 {
                return Err(corrupt("tensor shape mismatch"));
            }
            if i > 0 && layers.last().is_some_and(|p: &Dense| p.outputs != inputs) {
                return Err(corrupt("consecutive layers do not connect"));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        if layers.last().unwrap().outputs != 1 {
            return Err(corrupt("output layer must have one unit"));
        }
        Ok(RegressionNet { layers })
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegHyper {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub dropout: bool,
}

impl Default for RegHyper {
    fn default() -> Self {
        RegHyper {
            lr: 0.001,
            batch: 8,
            epochs: 1500,
            l2: 1e-4,
            seed: 0,
            dropout: true,
        }
    }
}

impl RegHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be positive");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub final_val_mse: f64,
    pub final_train_mse: f64,
    pub epochs: usize,
}

/// Minibatch SGD over `train`; returns the parameters with the lowest
/// validation MSE seen after any epoch.
pub fn fit(train: &[Sample], val: &[Sample], hyper: &RegHyper) -> Result<(RegressionNet, FitReport)> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let inputs = train[0].features.len();
    if let Some(s) = train.iter().chain(val).find(|s| s.features.len() != inputs) {
        return Err(Error::DimensionMismatch {
            expected: inputs,
            found: s.features.len(),
        });
    }
    let mut net = RegressionNet::with_hidden(inputs, &HIDDEN, hyper.seed);
    let mut grad = net.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (net.clone(), f64::INFINITY, 0);
    let mut val_mse = f64::INFINITY;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            grad.zero();
            net.loss_and_grad(&batch, hyper.l2, hyper.dropout, &mut rng, &mut grad);
            sgd_step(&mut net, &grad, hyper.lr);
        }
        val_mse = net.mse(val);
        if !val_mse.is_finite() {
            return Err(Error::InvalidInput(format!("training diverged at epoch {epoch}")));
        }
        if val_mse < best.1 {
            best = (net.clone(), val_mse, epoch);
        }
    }
    let report = FitReport {
        best_epoch: best.2,
        best_val_mse: best.1,
        final_val_mse: val_mse,
        final_train_mse: best.0.mse(train),
        epochs: hyper.epochs,
    };
    Ok((best.0, report))
}

/// Embed both splits with `model` and fit the regressor.
pub fn train_regressor(
    train: &PairDataset,
    val: &PairDataset,
    model: &EmbeddingModel,
    prep: &PrepConfig,
    hyper: &RegHyper,
) -> Result<(RegressionNet, FitReport)> {
    fit(&pair_samples(model, train, prep)?, &pair_samples(model, val, prep)?, hyper)
}

/// Seeded split of `indices` into (train, validation), the validation part
/// being `VALIDATION_FRACTION` of the items (rounded, at least one each).
pub fn holdout_split(indices: &[usize], seed: u64, stream: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::InvalidInput("need at least two items to hold out a validation set".into()));
    }
    let mut shuffled = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    shuffled.shuffle(&mut rng);
    let n_val = ((indices.len() as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, indices.len() - 1);
    let val = shuffled.split_off(shuffled.len() - n_val);
    Ok((shuffled, val))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Protocol {
    /// Stratified k-fold cross-validation over one dataset.
    CrossValidation { k: usize, seed: u64 },
    /// Train on the evaluated dataset, test on a separate one.
    FixedSplit { test: PairDataset },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub pearson: f64,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupervisedReport {
    pub dataset: String,
    pub protocol: String,
    pub folds: Vec<FoldResult>,
    pub mean_pearson: f64,
}

fn run_fold(
    fold: usize,
    samples: &[Sample],
    train_idx: &[usize],
    test: &[Sample],
    hyper: &RegHyper,
) -> Result<FoldResult> {
    let (tr, va) = holdout_split(train_idx, hyper.seed, fold as u64 + 1)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (net, report) = fit(&pick(&tr), &pick(&va), hyper)?;
    let gold: Vec<f64> = test.iter().map(|s| s.target).collect();
    Ok(FoldResult {
        fold,
        n_train: tr.len(),
        n_val: va.len(),
        n_test: test.len(),
        pearson: pearson(&net.predict_all(test), &gold)?,
        best_epoch: report.best_epoch,
        best_val_mse: report.best_val_mse,
    })
}

/// Cross-validation on precomputed samples. Folds run in parallel.
pub fn cross_validate(samples: &[Sample], k: usize, seed: u64, hyper: &RegHyper) -> Result<Vec<FoldResult>> {
    let scores: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let plan = stratified_folds(&scores, k, seed)?;
    (0..plan.k())
        .into_par_iter()
        .map(|f| {
            let test: Vec<Sample> = plan.folds[f].iter().map(|&i| samples[i].clone()).collect();
            run_fold(f, samples, &plan.train_indices(f), &test, hyper)
        })
        .collect()
}

/// Fixed train/test protocol on precomputed samples.
pub fn fixed_split(train: &[Sample], test: &[Sample], hyper: &RegHyper) -> Result<FoldResult> {
    let idx: Vec<usize> = (0..train.len()).collect();
    run_fold(0, train, &idx, test, hyper)
}

/// Supervised evaluation of a sentence-embedding model: Pearson correlation
/// of the fitted regressor on each test fold, and their mean.
pub fn evaluate_supervised(
    dataset: &PairDataset,
    model: &EmbeddingModel,
    prep: &PrepConfig,
    hyper: &RegHyper,
    protocol: &Protocol,
) -> Result<SupervisedReport> {
    hyper.validate()?;
    let samples = pair_samples(model, dataset, prep)?;
    let (name, folds) = match protocol {
        Protocol::CrossValidation { k, seed } => ("cv", cross_validate(&samples, *k, *seed, hyper)?),
        Protocol::FixedSplit { test } => {
            let test = pair_samples(model, test, prep)?;
            ("fixed", vec![fixed_split(&samples, &test, hyper)?])
        }
    };
    let mean_pearson = folds.iter().map(|f| f.pearson).sum::<f64>() / folds.len() as f64;
    Ok(SupervisedReport {
        dataset: dataset.name.clone(),
        protocol: name.to_string(),
        folds,
        mean_pearson,
    })
}
