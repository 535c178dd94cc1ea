use serde::Serialize;

use crate::error::{Error, Result};
use crate::transformer::{HeadMask, TransformerConfig};

/// Weight-matrix parameters of one layer (biases and layernorms excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub standard: u64,
    pub hydra: u64,
    pub deep_ensemble: u64,
}

/// Whole-model figures for the three architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelTotals {
    pub standard: u64,
    pub hydra: u64,
    pub deep_ensemble: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub members: usize,
    /// Rows processed per forward pass (tokens plus the classification token).
    pub rows: usize,
    pub per_layer: Vec<LayerCost>,
    /// All parameters: weights, biases, layernorms, embeddings, classifier.
    pub params: ModelTotals,
    /// Multiply-adds of one forward pass.
    pub mult_adds: ModelTotals,
}

/// Closed-form parameter and multiply-add counts of a standard model, the
/// fused model built from `masks`, and a deep ensemble of `masks.len()`
/// unpruned models.
pub fn cost_report(cfg: &TransformerConfig, masks: &[HeadMask]) -> Result<CostReport> {
    cfg.validate()?;
    if masks.is_empty() {
        return Err(Error::contract(
            "fusion",
            "cost report needs at least one mask",
        ));
    }
    for m in masks {
        m.validate(cfg)?;
    }
    let m_count = masks.len() as u64;
    let d = cfg.hidden as u64;
    let ff = cfg.ff as u64;
    let d_k = cfg.head_dim() as u64;
    let n = cfg.positions() as u64;
    let c = cfg.classes as u64;

    let mlp_weights = 2 * d * ff;
    let mlp_extra = ff + d;
    let ln = 4 * d;
    let standard_layer = 4 * d * d + mlp_weights;
    let standard_layer_all = standard_layer + 4 * d + mlp_extra + ln;

    let mut per_layer = Vec::with_capacity(cfg.layers);
    let mut hydra_layers_all = 0;
    let mut hydra_mult_adds = 0;
    for l in 0..cfg.layers {
        let widths: Vec<u64> = masks
            .iter()
            .map(|m| m.alive_count(l) as u64 * d_k)
            .collect();
        let width: u64 = widths.iter().sum();
        let hydra = 4 * d * width + mlp_weights;
        per_layer.push(LayerCost {
            standard: standard_layer,
            hydra,
            deep_ensemble: m_count * standard_layer,
        });
        // Per member: sliced Q/K/V biases plus a full output bias.
        hydra_layers_all += hydra + 3 * width + m_count * d + mlp_extra + ln;
        hydra_mult_adds += widths
            .iter()
            .map(|&w| 3 * n * d * w + 2 * n * n * w + n * w * d)
            .sum::<u64>()
            + m_count * n * mlp_weights;
    }
    let layers = cfg.layers as u64;
    let shared = (cfg.vocab as u64) * d + n * d + d + 2 * d + d * c + c;
    let standard_all = layers * standard_layer_all + shared;
    let standard_mult_adds = layers * (4 * n * d * d + 2 * n * n * d + n * mlp_weights) + d * c;

    Ok(CostReport {
        members: masks.len(),
        rows: n as usize,
        per_layer,
        params: ModelTotals {
            standard: standard_all,
            hydra: hydra_layers_all + shared,
            deep_ensemble: m_count * standard_all,
        },
        mult_adds: ModelTotals {
            standard: standard_mult_adds,
            hydra: hydra_mult_adds + m_count * d * c,
            deep_ensemble: m_count * standard_mult_adds,
        },
    })
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# cost members={} rows={}\nlayer\tstandard\thydra\tdeep_ensemble\n",
            self.members, self.rows
        );
        for (l, c) in self.per_layer.iter().enumerate() {
            out.push_str(&format!(
                "{l}\t{}\t{}\t{}\n",
                c.standard, c.hydra, c.deep_ensemble
            ));
        }
        for (name, t) in [("params", self.params), ("mult_adds", self.mult_adds)] {
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\n",
                t.standard, t.hydra, t.deep_ensemble
            ));
        }
        out
    }
}
