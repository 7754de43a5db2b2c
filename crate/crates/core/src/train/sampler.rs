use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

const POWER: f64 = 0.75;

/// Draws negative words with probability proportional to `count^0.75`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(POWER)).collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::EmptyVocabulary)?;
        let total = weights.iter().sum();
        Ok(NegativeSampler {
            dist,
            weights,
            total,
        })
    }

    /// Sampling mass of `word` (unnormalized).
    pub fn weight(&self, word: u32) -> f64 {
        self.weights[word as usize]
    }

    /// Draw a word other than `exclude`, redrawing on a hit. `None` when no
    /// other word has positive mass.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, exclude: u32) -> Option<u32> {
        let excluded = self.weights.get(exclude as usize).copied().unwrap_or(0.0);
        if self.total - excluded <= 0.0 || self.weights.len() < 2 {
            return None;
        }
        loop {
            let w = self.dist.sample(rng) as u32;
            if w != exclude {
                return Some(w);
            }
        }
    }
}
