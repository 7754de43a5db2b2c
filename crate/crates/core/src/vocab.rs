//! Word vocabulary with subsampling probabilities, and hashing of word
//! n-grams into a fixed number of buckets.

use std::collections::HashMap;

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Probability of discarding an occurrence of a word during training:
/// `max(0, 1 - sqrt(t / f))` with `f = count / total`.
pub fn discard_probability(count: u64, total_tokens: u64, t: f64) -> f64 {
    debug_assert!(count >= 1 && total_tokens >= count && t > 0.0);
    let f = count as f64 / total_tokens as f64;
    (1.0 - (t / f).sqrt()).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    discard: Vec<f64>,
    total_tokens: u64,
    min_count: u64,
    subsample_t: f64,
}

impl Vocabulary {
    /// Assemble a vocabulary from `(word, count)` pairs already in id order.
    /// Used when deserializing; the caller guarantees the ordering.
    pub fn from_counts(entries: Vec<(String, u64)>, min_count: u64, subsample_t: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if !(subsample_t > 0.0) {
            return Err(Error::InvalidConfig("subsampling threshold must be positive".into()));
        }
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (id, (word, count)) in entries.into_iter().enumerate() {
            if count == 0 {
                return Err(Error::Corrupt(format!("word '{word}' has count 0")));
            }
            if index.insert(word.clone(), id as u32).is_some() {
                return Err(Error::Corrupt(format!("duplicate word '{word}'")));
            }
            words.push(word);
            counts.push(count);
        }
        let total_tokens = counts.iter().sum();
        let discard = counts
            .iter()
            .map(|&c| discard_probability(c, total_tokens, subsample_t))
            .collect();
        Ok(Vocabulary {
            words,
            counts,
            index,
            discard,
            total_tokens,
            min_count,
            subsample_t,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn discard_prob(&self, id: u32) -> f64 {
        self.discard[id as usize]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn subsample_t(&self) -> f64 {
        self.subsample_t
    }

    /// Map tokens to ids, skipping out-of-vocabulary tokens.
    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }
}

/// Accumulates word counts. Counting is order-free, so partial builders
/// can be merged.
#[derive(Clone, Debug, Default)]
pub struct VocabBuilder {
    counts: HashMap<String, u64>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for t in tokens {
            let t = t.as_ref();
            match self.counts.get_mut(t) {
                Some(c) => *c += 1,
                None => {
                    self.counts.insert(t.to_owned(), 1);
                }
            }
        }
    }

    pub fn merge(&mut self, other: VocabBuilder) {
        for (w, c) in other.counts {
            *self.counts.entry(w).or_insert(0) += c;
        }
    }

    /// Keep words seen at least `min_count` times, ids by descending count
    /// with ties broken lexicographically.
    pub fn build(self, min_count: u64, subsample_t: f64) -> Result<Vocabulary> {
        let mut entries: Vec<(String, u64)> = self
            .counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocabulary::from_counts(entries, min_count, subsample_t)
    }
}

/// Build a vocabulary from a stream of tokenized sentences.
pub fn build_vocab<I, T, S>(sentences: I, min_count: u64, subsample_t: f64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut builder = VocabBuilder::new();
    for s in sentences {
        builder.count(s.as_ref());
    }
    builder.build(min_count, subsample_t)
}

/// Maps contiguous word-id n-grams to bucket rows `V + (hash mod B)`.
///
/// The hash is 64-bit FNV-1a run over the little-endian bytes of each
/// 32-bit id of the n-gram in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NgramHasher {
    ngram_order: u32,
    bucket_count: u32,
    vocab_size: u32,
}

impl NgramHasher {
    pub fn new(ngram_order: u32, bucket_count: u32, vocab_size: u32) -> Result<Self> {
        if ngram_order == 0 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        if bucket_count == 0 && ngram_order > 1 {
            return Err(Error::InvalidConfig("bucket count must be positive".into()));
        }
        if (vocab_size as u64) + (bucket_count as u64) > u32::MAX as u64 {
            return Err(Error::InvalidConfig("vocabulary plus buckets exceeds 2^32 rows".into()));
        }
        Ok(NgramHasher {
            ngram_order,
            bucket_count,
            vocab_size,
        })
    }

    pub fn ngram_order(&self) -> u32 {
        self.ngram_order
    }

    pub fn bucket_count(&self) -> u32 {
        self.bucket_count
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Total number of input rows (words plus buckets).
    pub fn rows(&self) -> usize {
        self.vocab_size as usize + self.bucket_count as usize
    }

    /// Raw 64-bit hash of an id sequence.
    pub fn hash(ids: &[u32]) -> u64 {
        ids.iter().fold(FNV_OFFSET, |h, &id| fnv_step(h, id))
    }

    /// Bucket ids of all n-grams of length 2..=order. Emitted by start
    /// position, then by increasing length.
    pub fn ngram_ids(&self, ids: &[u32]) -> Vec<u32> {
        let mut out = Vec::new();
        self.extend_ngram_ids(ids, &mut out);
        out
    }

    pub fn extend_ngram_ids(&self, ids: &[u32], out: &mut Vec<u32>) {
        let order = self.ngram_order as usize;
        if order < 2 {
            return;
        }
        let buckets = self.bucket_count as u64;
        for start in 0..ids.len() {
            let mut h = fnv_step(FNV_OFFSET, ids[start]);
            for &id in ids.iter().skip(start + 1).take(order - 1) {
                h = fnv_step(h, id);
                out.push(self.vocab_size + (h % buckets) as u32);
            }
        }
    }
}

#[inline]
fn fnv_step(mut h: u64, id: u32) -> u64 {
    for b in id.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}
