use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transformer::TransformerConfig;

/// How many heads to prune: a count per layer, or a total over all layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PruneBudget {
    PerLayer(Vec<usize>),
    Global(usize),
}

impl PruneBudget {
    pub fn uniform(cfg: &TransformerConfig, per_layer: usize) -> Self {
        PruneBudget::PerLayer(vec![per_layer; cfg.layers])
    }

    pub fn total(&self) -> usize {
        match self {
            PruneBudget::PerLayer(r) => r.iter().sum(),
            PruneBudget::Global(b) => *b,
        }
    }

    /// Every layer must keep at least one head.
    pub fn validate(&self, cfg: &TransformerConfig) -> Result<()> {
        match self {
            PruneBudget::PerLayer(r) => {
                if r.len() != cfg.layers {
                    return Err(Error::contract(
                        "pruning",
                        format!("{} per-layer budgets for {} layers", r.len(), cfg.layers),
                    ));
                }
                if let Some((l, &n)) = r.iter().enumerate().find(|(_, &n)| n >= cfg.heads) {
                    return Err(Error::contract(
                        "pruning",
                        format!("layer {l} budget {n} leaves no head of {}", cfg.heads),
                    ));
                }
            }
            PruneBudget::Global(b) => {
                let max = cfg.layers * (cfg.heads - 1);
                if *b > max {
                    return Err(Error::contract(
                        "pruning",
                        format!(
                            "global budget {b} exceeds {max} (one head per layer must survive)"
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether one more removal in `layer` fits, given per-layer removal counts.
    pub(crate) fn admits(&self, removed_per_layer: &[usize], layer: usize) -> bool {
        match self {
            PruneBudget::PerLayer(r) => removed_per_layer[layer] < r[layer],
            PruneBudget::Global(b) => removed_per_layer.iter().sum::<usize>() < *b,
        }
    }
}

/// Tie-break priority of every `(layer, head)`: its position after shuffling
/// the lexicographically ordered candidates with `seed`. Lower wins.
pub fn tie_ranks(layers: usize, heads: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<(usize, usize)> = (0..layers)
        .flat_map(|l| (0..heads).map(move |h| (l, h)))
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ranks = vec![vec![0; heads]; layers];
    for (i, (l, h)) in order.into_iter().enumerate() {
        ranks[l][h] = i;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_survivor_rule() {
        let cfg = TransformerConfig {
            layers: 2,
            heads: 4,
            hidden: 8,
            ..Default::default()
        };
        assert!(PruneBudget::Global(6).validate(&cfg).is_ok());
        assert!(PruneBudget::Global(7).validate(&cfg).is_err());
        assert!(PruneBudget::PerLayer(vec![3, 0]).validate(&cfg).is_ok());
        assert!(PruneBudget::PerLayer(vec![4, 0]).validate(&cfg).is_err());
        assert!(PruneBudget::PerLayer(vec![1]).validate(&cfg).is_err());
    }

    #[test]
    fn tie_ranks_are_a_seeded_permutation() {
        let r = tie_ranks(2, 3, 7);
        let mut all: Vec<usize> = r.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert_eq!(r, tie_ranks(2, 3, 7));
    }
}
