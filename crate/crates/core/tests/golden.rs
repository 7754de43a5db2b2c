//! Committed model files. Retraining with the configuration stored in each
//! header must reproduce the file byte for byte; a failure here means the
//! training arithmetic, the RNG streams or the file layout changed.

use std::path::PathBuf;

use sentvec::train::train;
use sentvec::EmbeddingModel;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

const MODELS: [(&str, u32, u32, u32); 3] = [
    // name, dim, ngram order, buckets
    ("small.bsvm", 8, 2, 64),
    ("unigram.bsvm", 5, 1, 16),
    ("subsample.bsvm", 6, 3, 128),
];

#[test]
fn headers() {
    for (name, dim, order, buckets) in MODELS {
        let m = EmbeddingModel::load(golden(name)).unwrap();
        let h = m.header();
        assert_eq!((h.dim, h.ngram_order, h.bucket_count), (dim, order, buckets), "{name}");
        assert_eq!(h.vocab_size, 38);
        assert_eq!(h.train_config.workers, 1);
        let v = m.sentence_vector(&["tumor", "kinase", "craf"]);
        assert!(v.iter().all(|x| x.is_finite()) && v.iter().any(|&x| x != 0.0));
    }
}

#[test]
fn save_reproduces_file() {
    for (name, ..) in MODELS {
        let bytes = std::fs::read(golden(name)).unwrap();
        let m = EmbeddingModel::load(golden(name)).unwrap();
        let mut out = Vec::new();
        m.write_to(&mut out).unwrap();
        assert!(out == bytes, "{name}");
    }
}

#[test]
fn retraining_reproduces_file() {
    let corpus = golden("corpus.txt");
    for (name, ..) in MODELS {
        let bytes = std::fs::read(golden(name)).unwrap();
        let stored = EmbeddingModel::load(golden(name)).unwrap();
        let (model, _) = train(&[&corpus], &stored.header().train_config).unwrap();
        let mut out = Vec::new();
        model.write_to(&mut out).unwrap();
        assert!(out == bytes, "{name} drifted");
    }
}
