use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture shared by the autoregressive and non-autoregressive models.
/// The defaults are the full-size configuration; desk-scale runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Codebook size plus one for `<eos>`.
    pub acoustic_vocab: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { layers: 6, heads: 16, d_model: 512, d_ff: 2048, dropout: 0.1, acoustic_vocab: 65, max_len: 1024 }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.acoustic_vocab < 2 {
            return Err(Error::InvalidConfig("acoustic_vocab must be at least 2".into()));
        }
        if self.max_len == 0 || self.layers == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("layers, d_ff and max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn codebook_size(&self) -> usize {
        self.acoustic_vocab - 1
    }

    pub fn eos(&self) -> usize {
        self.acoustic_vocab - 1
    }
}
