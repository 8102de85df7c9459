use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

use super::config::ModelConfig;
use super::vocab::Vocabulary;
use super::weights::{Layer, Model};

/// Model with Gaussian weights scaled by `1/sqrt(fan_in)` and unit norm
/// gains. Deterministic in `(config, vocab, seed)`.
pub fn random_model<T: Scalar>(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocab has {} words but config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize, std: f64| {
        let dist = Normal::new(0.0, std).expect("positive std");
        Matrix::from_fn(rows, cols, |_, _| T::lit(dist.sample(&mut rng)))
    };
    let d = config.d_model;
    let s = 1.0 / (d as f64).sqrt();
    let tok = gauss(config.vocab_size, d, 1.0);
    let pos = gauss(config.max_seq_len, d, 0.5);
    let layers = (0..config.n_layers)
        .map(|_| Layer {
            wq: gauss(d, d, s),
            wk: gauss(d, d, s),
            wv: gauss(d, d, s),
            wo: gauss(d, d, s),
            norm1: vec![T::one(); d],
            norm2: vec![T::one(); d],
            mlp_w1: gauss(d, config.d_ff, s),
            mlp_w2: gauss(config.d_ff, d, 1.0 / (config.d_ff as f64).sqrt()),
        })
        .collect();
    let unembed = gauss(d, config.vocab_size, s);
    Model::new(config, vocab, tok, pos, layers, unembed)
}
