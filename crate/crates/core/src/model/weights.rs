use crate::error::{Error, Result};
use crate::numerics::{all_finite, cast, Matrix, Scalar};

use super::config::ModelConfig;
use super::vocab::Vocabulary;

/// Weights of one pre-norm decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub norm1: Vec<T>,
    pub norm2: Vec<T>,
    /// `d_model x d_ff`
    pub mlp_w1: Matrix<T>,
    /// `d_ff x d_model`
    pub mlp_w2: Matrix<T>,
}

/// Full weight set of the toy visual-prefix decoder. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    vocab: Vocabulary,
    tok_embed: Matrix<T>,
    pos_embed: Matrix<T>,
    layers: Vec<Layer<T>>,
    unembed: Matrix<T>,
}

fn expect_shape<T: Scalar>(name: &str, m: &Matrix<T>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::format(
            name,
            format!("expected shape {shape:?}, found {:?}", m.shape()),
        ));
    }
    if !m.is_finite() {
        return Err(Error::format(name, "non-finite entries"));
    }
    Ok(())
}

fn expect_len<T: Scalar>(name: &str, v: &[T], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::format(name, format!("expected length {len}, found {}", v.len())));
    }
    if !all_finite(v) {
        return Err(Error::format(name, "non-finite entries"));
    }
    Ok(())
}

impl<T: Scalar> Model<T> {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        tok_embed: Matrix<T>,
        pos_embed: Matrix<T>,
        layers: Vec<Layer<T>>,
        unembed: Matrix<T>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} words but config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let d = config.d_model;
        expect_shape("embed.tok", &tok_embed, (config.vocab_size, d))?;
        expect_shape("embed.pos", &pos_embed, (config.max_seq_len, d))?;
        expect_shape("unembed", &unembed, (d, config.vocab_size))?;
        if layers.len() != config.n_layers {
            return Err(Error::Config(format!(
                "{} layers supplied for n_layers = {}",
                layers.len(),
                config.n_layers
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            expect_shape(&format!("layers.{i}.wq"), &l.wq, (d, d))?;
            expect_shape(&format!("layers.{i}.wk"), &l.wk, (d, d))?;
            expect_shape(&format!("layers.{i}.wv"), &l.wv, (d, d))?;
            expect_shape(&format!("layers.{i}.wo"), &l.wo, (d, d))?;
            expect_len(&format!("layers.{i}.norm1"), &l.norm1, d)?;
            expect_len(&format!("layers.{i}.norm2"), &l.norm2, d)?;
            expect_shape(&format!("layers.{i}.mlp.w1"), &l.mlp_w1, (d, config.d_ff))?;
            expect_shape(&format!("layers.{i}.mlp.w2"), &l.mlp_w2, (config.d_ff, d))?;
        }
        Ok(Self {
            config,
            vocab,
            tok_embed,
            pos_embed,
            layers,
            unembed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tok_embed(&self) -> &Matrix<T> {
        &self.tok_embed
    }

    pub fn pos_embed(&self) -> &Matrix<T> {
        &self.pos_embed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn unembed(&self) -> &Matrix<T> {
        &self.unembed
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let v = |xs: &[T]| xs.iter().map(|&x| cast(x)).collect::<Vec<U>>();
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tok_embed: self.tok_embed.cast(),
            pos_embed: self.pos_embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    norm1: v(&l.norm1),
                    norm2: v(&l.norm2),
                    mlp_w1: l.mlp_w1.cast(),
                    mlp_w2: l.mlp_w2.cast(),
                })
                .collect(),
            unembed: self.unembed.cast(),
        }
    }

    /// Named tensors in canonical order, as stored in weight files.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        let mat = |m: &Matrix<T>| vec![m.rows(), m.cols()];
        out.push(("embed.tok".into(), mat(&self.tok_embed), self.tok_embed.as_slice()));
        out.push(("embed.pos".into(), mat(&self.pos_embed), self.pos_embed.as_slice()));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.wq"), mat(&l.wq), l.wq.as_slice()));
            out.push((format!("layers.{i}.wk"), mat(&l.wk), l.wk.as_slice()));
            out.push((format!("layers.{i}.wv"), mat(&l.wv), l.wv.as_slice()));
            out.push((format!("layers.{i}.wo"), mat(&l.wo), l.wo.as_slice()));
            out.push((format!("layers.{i}.norm1"), vec![l.norm1.len()], &l.norm1));
            out.push((format!("layers.{i}.norm2"), vec![l.norm2.len()], &l.norm2));
            out.push((format!("layers.{i}.mlp.w1"), mat(&l.mlp_w1), l.mlp_w1.as_slice()));
            out.push((format!("layers.{i}.mlp.w2"), mat(&l.mlp_w2), l.mlp_w2.as_slice()));
        }
        out.push(("unembed".into(), mat(&self.unembed), self.unembed.as_slice()));
        out
    }
}
