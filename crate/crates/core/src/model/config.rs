use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch grid of the visual prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// Number of visual tokens.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dimensions of the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Hidden width of the MLP.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub grid: Grid,
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible into {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab must hold at least BOS, yes, no and one object".into()));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("visual grid is empty".into()));
        }
        if self.max_seq_len <= self.grid.len() {
            return Err(Error::Config(format!(
                "max_seq_len {} cannot hold {} visual tokens",
                self.max_seq_len,
                self.grid.len()
            )));
        }
        Ok(())
    }
}
