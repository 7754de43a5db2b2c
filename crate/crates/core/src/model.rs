//! The embedding parameter store and sentence-vector composition.

use crate::train::TrainConfig;
use crate::vocab::{NgramHasher, Vocabulary};

pub use crate::format::{FORMAT_VERSION, MAGIC};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelHeader {
    pub format_version: u32,
    pub dim: u32,
    pub vocab_size: u32,
    pub bucket_count: u32,
    pub ngram_order: u32,
    pub train_config: TrainConfig,
}

/// Input rows cover words then n-gram buckets; output rows cover words.
/// Both are row-major `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub(crate) header: ModelHeader,
    pub(crate) vocab: Vocabulary,
    pub(crate) hasher: NgramHasher,
    pub(crate) input: Vec<f32>,
    pub(crate) output: Vec<f32>,
}

impl EmbeddingModel {
    /// Assemble a model from its parts, checking that all shapes agree.
    pub fn from_parts(
        vocab: Vocabulary,
        hasher: NgramHasher,
        train_config: TrainConfig,
        input: Vec<f32>,
        output: Vec<f32>,
    ) -> crate::Result<Self> {
        let dim = train_config.dim as usize;
        let v = vocab.len();
        let shape_err = |what: &str| crate::Error::Corrupt(format!("{what} shape does not match header"));
        if hasher.vocab_size() as usize != v {
            return Err(shape_err("hasher"));
        }
        if hasher.bucket_count() != train_config.bucket_count
            || hasher.ngram_order() != train_config.ngram_order
        {
            return Err(shape_err("hasher"));
        }
        if dim == 0 || input.len() != hasher.rows() * dim {
            return Err(shape_err("input matrix"));
        }
        if output.len() != v * dim {
            return Err(shape_err("output matrix"));
        }
        let header = ModelHeader {
            format_version: FORMAT_VERSION,
            dim: train_config.dim,
            vocab_size: v as u32,
            bucket_count: hasher.bucket_count(),
            ngram_order: hasher.ngram_order(),
            train_config,
        };
        Ok(EmbeddingModel {
            header,
            vocab,
            hasher,
            input,
            output,
        })
    }

    pub fn header(&self) -> &ModelHeader {
        &self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn hasher(&self) -> &NgramHasher {
        &self.hasher
    }

    pub fn input_matrix(&self) -> &[f32] {
        &self.input
    }

    pub fn output_matrix(&self) -> &[f32] {
        &self.output
    }

    pub fn input_matrix_mut(&mut self) -> &mut [f32] {
        &mut self.input
    }

    pub fn output_matrix_mut(&mut self) -> &mut [f32] {
        &mut self.output
    }

    /// Both matrices mutably at once.
    pub fn matrices_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.input, &mut self.output)
    }

    pub fn input_row(&self, row: u32) -> &[f32] {
        let d = self.dim();
        &self.input[row as usize * d..(row as usize + 1) * d]
    }

    pub fn output_row(&self, word: u32) -> &[f32] {
        let d = self.dim();
        &self.output[word as usize * d..(word as usize + 1) * d]
    }

    /// Input rows contributing to a token sequence: in-vocabulary word ids
    /// followed by the n-gram buckets of that id sequence. Out-of-vocabulary
    /// tokens are dropped before n-grams are formed.
    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut ids = self.vocab.ids(tokens);
        let words = ids.len();
        let ngrams = self.hasher.ngram_ids(&ids);
        ids.reserve(ngrams.len());
        ids.extend(ngrams);
        debug_assert!(ids.len() >= words);
        ids
    }

    /// Mean of the input rows of all features; zero when there are none.
    pub fn sentence_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f32> {
        let features = self.features(tokens);
        let mut v = vec![0f32; self.dim()];
        if features.is_empty() {
            return v;
        }
        for &f in &features {
            for (acc, &x) in v.iter_mut().zip(self.input_row(f)) {
                *acc += x;
            }
        }
        let n = features.len() as f32;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn similarity(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "similarity of vectors with different dimensions");
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Words "a" (id 0) and "b" (id 1), 4 buckets, d = 2.
    fn two_word_model() -> EmbeddingModel {
        let vocab =
            Vocabulary::from_counts(vec![("a".into(), 3), ("b".into(), 2)], 1, 1e-4).unwrap();
        let hasher = NgramHasher::new(2, 4, 2).unwrap();
        let config = TrainConfig {
            dim: 2,
            bucket_count: 4,
            ..TrainConfig::default()
        };
        let input = vec![
            1.0, 0.0, // a
            0.0, 2.0, // b
            10.0, 10.0, // buckets 2..6
            20.0, 20.0, //
            30.0, 30.0, //
            40.0, 40.0,
        ];
        EmbeddingModel::from_parts(vocab, hasher, config, input, vec![0.0; 4]).unwrap()
    }

    #[test]
    fn single_token_is_its_row() {
        let m = two_word_model();
        assert_eq!(m.sentence_vector(&["b"]), vec![0.0, 2.0]);
    }

    #[test]
    fn all_oov_is_zero() {
        let m = two_word_model();
        assert_eq!(m.sentence_vector(&["x", "y"]), vec![0.0, 0.0]);
        assert_eq!(m.sentence_vector::<&str>(&[]), vec![0.0, 0.0]);
    }

    #[test]
    fn two_tokens_average_with_bigram() {
        let m = two_word_model();
        let bucket = 2 + (NgramHasher::hash(&[0, 1]) % 4) as usize;
        let brow = [m.input[bucket * 2], m.input[bucket * 2 + 1]];
        let expect = [(1.0 + 0.0 + brow[0]) / 3.0, (0.0 + 2.0 + brow[1]) / 3.0];
        assert_eq!(m.sentence_vector(&["a", "b"]), expect.to_vec());
        // OOV tokens are removed before bigrams are formed.
        assert_eq!(m.sentence_vector(&["a", "zzz", "b"]), expect.to_vec());
    }

    #[test]
    fn similarity_examples() {
        let u = [0.3f32, -1.2, 2.5];
        let neg: Vec<f32> = u.iter().map(|x| -x).collect();
        assert_eq!(similarity(&u, &u), 1.0);
        assert_eq!(similarity(&u, &neg), -1.0);
        assert_eq!(similarity(&[0.0; 3], &u), 0.0);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let m = two_word_model();
        let r = EmbeddingModel::from_parts(
            m.vocab.clone(),
            m.hasher,
            m.header.train_config.clone(),
            vec![0.0; 3],
            vec![0.0; 4],
        );
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_scale_invariant(
            u in prop::collection::vec(-5f32..5.0, 4),
            v in prop::collection::vec(-5f32..5.0, 4),
            a in 0.1f32..10.0,
            b in 0.1f32..10.0,
        ) {
            let s = similarity(&u, &v);
            prop_assert!((s - similarity(&v, &u)).abs() < 1e-12);
            let su: Vec<f32> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * b).collect();
            prop_assert!((s - similarity(&su, &sv)).abs() < 1e-5);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
