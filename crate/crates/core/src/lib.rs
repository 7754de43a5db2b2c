//! Sentence embeddings trained as sentence-level CBOW over words and hashed
//! word n-grams with negative sampling, together with the evaluation heads
//! built on top of them: unsupervised and supervised sentence-pair
//! similarity, and a convolutional multi-label sentence classifier.
//!
//! The modules follow the pipeline:
//!
//! - [`prep`]: sentence splitting, tokenization, stopword/punctuation removal
//! - [`vocab`]: vocabulary, subsampling, n-gram bucket hashing
//! - [`model`]: the parameter store, sentence vectors and cosine similarity
//! - [`train`]: the negative-sampling trainer
//! - [`nn`]: dense layers, SGD and Adam shared by the two heads
//! - [`sts`]: sentence-pair datasets, Pearson correlation and fold plans
//! - [`regressor`]: the supervised pair-similarity network
//! - [`classifier`]: the CNN multi-label classifier and its metrics

pub mod classifier;
mod error;
mod format;
pub mod model;
pub mod nn;
pub mod prep;
pub mod regressor;
pub mod sts;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{similarity, EmbeddingModel, ModelHeader};
pub use train::TrainConfig;
