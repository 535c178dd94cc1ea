use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::TransformerConfig;

/// Per-layer head survival flags (`true` = head kept). One pruned member.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadMask {
    layers: Vec<Vec<bool>>,
}

impl HeadMask {
    pub fn full(layers: usize, heads: usize) -> Self {
        Self {
            layers: vec![vec![true; heads]; layers],
        }
    }

    pub fn for_config(cfg: &TransformerConfig) -> Self {
        Self::full(cfg.layers, cfg.heads)
    }

    pub fn from_rows(layers: Vec<Vec<bool>>) -> Result<Self> {
        let mask = Self { layers };
        mask.check_survivors()?;
        Ok(mask)
    }

    /// Builds a mask from the full one by removing `(layer, head)` pairs.
    pub fn without(
        cfg: &TransformerConfig,
        removed: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut mask = Self::for_config(cfg);
        for (l, h) in removed {
            mask.remove(l, h)?;
        }
        Ok(mask)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads_per_layer(&self) -> usize {
        self.layers.first().map_or(0, |r| r.len())
    }

    pub fn row(&self, layer: usize) -> &[bool] {
        &self.layers[layer]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn is_alive(&self, layer: usize, head: usize) -> bool {
        self.layers[layer][head]
    }

    /// Indices of surviving heads in `layer`, ascending.
    pub fn survivors(&self, layer: usize) -> Vec<usize> {
        surviving(&self.layers[layer])
    }

    /// `H_l`, the surviving head count of `layer`.
    pub fn alive_count(&self, layer: usize) -> usize {
        self.layers[layer].iter().filter(|&&b| b).count()
    }

    pub fn total_alive(&self) -> usize {
        (0..self.layers.len()).map(|l| self.alive_count(l)).sum()
    }

    pub fn is_full(&self) -> bool {
        self.layers.iter().flatten().all(|&b| b)
    }

    /// Removes a head, refusing to empty a layer. Removing a dead head is a no-op.
    pub fn remove(&mut self, layer: usize, head: usize) -> Result<()> {
        let row = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::contract("transformer", format!("layer {layer} out of range")))?;
        if head >= row.len() {
            return Err(Error::contract(
                "transformer",
                format!("head {head} out of range in layer {layer}"),
            ));
        }
        if row[head] && row.iter().filter(|&&b| b).count() == 1 {
            return Err(Error::contract(
                "transformer",
                format!("removing head {head} would leave layer {layer} without heads"),
            ));
        }
        row[head] = false;
        Ok(())
    }

    /// Whether `(layer, head)` can be removed without emptying its layer.
    pub fn can_remove(&self, layer: usize, head: usize) -> bool {
        self.layers[layer][head] && self.alive_count(layer) > 1
    }

    /// Number of `(layer, head)` slots whose flags differ.
    pub fn hamming(&self, other: &Self) -> usize {
        self.layers
            .iter()
            .flatten()
            .zip(other.layers.iter().flatten())
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Removed `(layer, head)` pairs in lexicographic order.
    pub fn removed(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (l, row) in self.layers.iter().enumerate() {
            for (h, &alive) in row.iter().enumerate() {
                if !alive {
                    out.push((l, h));
                }
            }
        }
        out
    }

    pub fn validate(&self, cfg: &TransformerConfig) -> Result<()> {
        if self.layers.len() != cfg.layers || self.layers.iter().any(|r| r.len() != cfg.heads) {
            return Err(Error::contract(
                "transformer",
                format!(
                    "mask {}x{} does not match config {}x{}",
                    self.layers.len(),
                    self.heads_per_layer(),
                    cfg.layers,
                    cfg.heads
                ),
            ));
        }
        self.check_survivors()
    }

    fn check_survivors(&self) -> Result<()> {
        for (l, row) in self.layers.iter().enumerate() {
            if !row.iter().any(|&b| b) {
                return Err(Error::contract(
                    "transformer",
                    format!("layer {l} has no surviving head"),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn surviving(row: &[bool]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter_map(|(h, &b)| b.then_some(h))
        .collect()
}

/// `1` for kept, `0` for pruned, layers separated by `|`, e.g. `1101|1111`.
impl fmt::Display for HeadMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (l, row) in self.layers.iter().enumerate() {
            if l > 0 {
                f.write_str("|")?;
            }
            for &b in row {
                f.write_str(if b { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

impl FromStr for HeadMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .trim()
            .split('|')
            .map(|row| {
                row.chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(Error::contract(
                            "transformer",
                            format!("bad mask character {other:?}"),
                        )),
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let width = layers.first().map_or(0, |r| r.len());
        if width == 0 || layers.iter().any(|r| r.len() != width) {
            return Err(Error::contract("transformer", format!("ragged mask {s:?}")));
        }
        Self::from_rows(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_to_empty_a_layer() {
        let mut m = HeadMask::full(1, 2);
        m.remove(0, 0).unwrap();
        assert!(m.remove(0, 1).is_err());
        // Removing an already dead head is idempotent.
        m.remove(0, 0).unwrap();
        assert_eq!(m.survivors(0), vec![1]);
    }

    #[test]
    fn display_parse_roundtrip() {
        let mut m = HeadMask::full(2, 4);
        m.remove(1, 2).unwrap();
        let s = m.to_string();
        assert_eq!(s, "1111|1101");
        assert_eq!(s.parse::<HeadMask>().unwrap(), m);
        assert!("0000|1111".parse::<HeadMask>().is_err());
    }

    #[test]
    fn hamming_counts_differences() {
        let a = HeadMask::full(2, 3);
        let mut b = a.clone();
        b.remove(0, 1).unwrap();
        b.remove(1, 2).unwrap();
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(b.removed(), vec![(0, 1), (1, 2)]);
    }
}
