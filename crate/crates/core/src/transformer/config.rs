use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the pre-norm encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Number of encoder layers `L`.
    pub layers: usize,
    /// Hidden size `d`.
    pub hidden: usize,
    /// Attention heads per layer `H`.
    pub heads: usize,
    /// MLP hidden width `d_ff`.
    pub ff: usize,
    /// Token sequence length `T` (the classification token is extra).
    pub seq_len: usize,
    pub vocab: usize,
    pub classes: usize,
    pub ln_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            heads: 8,
            ff: 64,
            seq_len: 16,
            vocab: 64,
            classes: 4,
            ln_eps: 1e-5,
        }
    }
}

impl TransformerConfig {
    /// Per-head width `d_k = d / H`.
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Rows of the hidden state: the classification token plus `T` tokens.
    pub fn positions(&self) -> usize {
        self.seq_len + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ff", self.ff),
            ("seq_len", self.seq_len),
            ("vocab", self.vocab),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(
                "transformer",
                format!("{name} must be >= 1"),
            ));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::contract(
                "transformer",
                format!(
                    "hidden {} not divisible by heads {}",
                    self.hidden, self.heads
                ),
            ));
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            return Err(Error::contract(
                "transformer",
                "ln_eps must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = TransformerConfig {
            hidden: 30,
            heads: 8,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TransformerConfig::default().validate().is_ok());
    }

    #[test]
    fn rejects_zero_fields() {
        let cfg = TransformerConfig {
            classes: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
