//! Sentence-pair similarity: datasets, cosine scoring, Pearson correlation
//! and stratified fold plans.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{similarity, EmbeddingModel};
use crate::prep::{prepare_sentence, PrepConfig};

pub const MAX_SCORE: f64 = 5.0;
const STRATA: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    pub s1: String,
    pub s2: String,
    /// Gold similarity in [0, 5].
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub name: String,
    pub pairs: Vec<SentencePair>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.score).collect()
    }

    /// The pairs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PairDataset {
        PairDataset {
            name: self.name.clone(),
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }
}

/// Parse `s1 \t s2 \t score` lines. A first line whose score column is not
/// a number is taken as a header; blank lines are ignored.
pub fn parse_pairs(text: &str, name: &str) -> Result<PairDataset> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let score = match cols[2].trim().parse::<f64>() {
            Ok(s) => s,
            Err(_) if pairs.is_empty() && lineno == 1 => continue,
            Err(_) => {
                return Err(Error::parse(lineno, format!("unparsable score '{}'", cols[2])));
            }
        };
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(Error::parse(lineno, format!("score {score} outside [0, 5]")));
        }
        pairs.push(SentencePair {
            s1: cols[0].to_owned(),
            s2: cols[1].to_owned(),
            score,
        });
    }
    Ok(PairDataset {
        name: name.to_owned(),
        pairs,
    })
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_pairs(&text, &name)
}

/// Sentence vectors for both sides of every pair.
pub fn embed_pairs(
    model: &EmbeddingModel,
    dataset: &PairDataset,
    prep: &PrepConfig,
) -> Vec<(Vec<f32>, Vec<f32>)> {
    dataset
        .pairs
        .par_iter()
        .map(|p| {
            (
                model.sentence_vector(&prepare_sentence(&p.s1, prep)),
                model.sentence_vector(&prepare_sentence(&p.s2, prep)),
            )
        })
        .collect()
}

/// Cosine similarity of the two sentence vectors of each pair.
pub fn cosine_predict(model: &EmbeddingModel, dataset: &PairDataset, prep: &PrepConfig) -> Vec<f64> {
    embed_pairs(model, dataset, prep)
        .par_iter()
        .map(|(u, v)| similarity(u, v))
        .collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("Pearson correlation needs at least 2 points".into()));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = gold.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(gold) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices of every fold except `fold`, in fold order.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

fn stratum(score: f64) -> usize {
    (score.floor().max(0.0) as usize).min(STRATA - 1)
}

/// Stratified k-fold plan over gold scores binned by `floor(score)`.
///
/// Each stratum is shuffled with the seed; the strata are then laid end to
/// end and dealt round-robin across folds, so fold sizes and per-stratum
/// fold counts each differ by at most one.
pub fn stratified_folds(scores: &[f64], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::InvalidConfig("number of folds must be positive".into()));
    }
    if k > scores.len() {
        return Err(Error::InvalidConfig(format!(
            "{k} folds requested for {} items",
            scores.len()
        )));
    }
    let mut strata = vec![Vec::new(); STRATA];
    for (i, &s) in scores.iter().enumerate() {
        strata[stratum(s)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for s in &mut strata {
        s.shuffle(&mut rng);
        for &i in s.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    Ok(FoldPlan { folds, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnsupervisedReport {
    pub dataset: String,
    pub pearson: f64,
    pub n: usize,
    /// Pearson within each fold, when a fold plan was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<f64>>,
}

pub fn evaluate_unsupervised(
    model: &EmbeddingModel,
    dataset: &PairDataset,
    prep: &PrepConfig,
) -> Result<UnsupervisedReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let pred = cosine_predict(model, dataset, prep);
    let r = pearson(&pred, &dataset.scores())?;
    Ok(UnsupervisedReport {
        dataset: dataset.name.clone(),
        pearson: r,
        n: dataset.len(),
        folds: None,
    })
}

/// Unsupervised evaluation with per-fold correlations reported alongside
/// the overall one.
pub fn evaluate_unsupervised_folds(
    model: &EmbeddingModel,
    dataset: &PairDataset,
    prep: &PrepConfig,
    k: usize,
    seed: u64,
) -> Result<UnsupervisedReport> {
    let pred = cosine_predict(model, dataset, prep);
    let gold = dataset.scores();
    let plan = stratified_folds(&gold, k, seed)?;
    let folds = plan
        .folds
        .iter()
        .map(|f| {
            let p: Vec<f64> = f.iter().map(|&i| pred[i]).collect();
            let g: Vec<f64> = f.iter().map(|&i| gold[i]).collect();
            pearson(&p, &g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnsupervisedReport {
        dataset: dataset.name.clone(),
        pearson: pearson(&pred, &gold)?,
        n: dataset.len(),
        folds: Some(folds),
    })
}
