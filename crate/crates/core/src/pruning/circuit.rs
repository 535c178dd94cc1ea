use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ablation::{ablate_perm, ablate_temp};
use super::budget::{tie_ranks, PruneBudget};
use super::report::CircuitRanking;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{auroc, msp};
use crate::scalar::Scalar;
use crate::transformer::{argmax, HeadMask, Model};

/// Objective maximized by circuit extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// In-distribution accuracy.
    Acc,
    /// AUROC of the maximum softmax probability, ID as positives.
    Ood,
    /// Mean of the two.
    Avg,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Acc => "acc",
            ScoreKind::Ood => "ood",
            ScoreKind::Avg => "avg",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(ScoreKind::Acc),
            "ood" => Ok(ScoreKind::Ood),
            "avg" => Ok(ScoreKind::Avg),
            other => Err(Error::contract(
                "pruning",
                format!("unknown score kind {other:?}"),
            )),
        }
    }
}

fn to_f64<S: Scalar>(p: Vec<S>) -> Vec<f64> {
    p.into_iter().map(|x| x.to_f64_lossy()).collect()
}

/// Evaluates the extraction objective of `model` under `mask`.
pub fn eval_score<S: Scalar>(
    model: &Model<S>,
    mask: &HeadMask,
    kind: ScoreKind,
    id: &[Sample],
    ood: &[Sample],
) -> Result<f64> {
    if id.is_empty() {
        return Err(Error::contract("pruning", "score needs ID data"));
    }
    if kind != ScoreKind::Acc && ood.is_empty() {
        return Err(Error::contract(
            "pruning",
            format!("score kind {kind} needs OOD data"),
        ));
    }
    let id_probs: Vec<Vec<f64>> = model.predict(id, mask)?.into_iter().map(to_f64).collect();
    let acc = || -> Result<f64> {
        let hits = id_probs
            .iter()
            .zip(id)
            .map(|(p, s)| {
                s.label
                    .map(|y| argmax(p) == y)
                    .ok_or_else(|| Error::contract("pruning", "ID sample has no label"))
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    };
    let ood_auroc = || -> Result<f64> {
        let id_scores: Vec<f64> = id_probs.iter().map(|p| msp(p)).collect();
        let ood_scores: Vec<f64> = model
            .predict(ood, mask)?
            .into_iter()
            .map(|p| msp(&to_f64(p)))
            .collect();
        auroc(&id_scores, &ood_scores)
    };
    match kind {
        ScoreKind::Acc => acc(),
        ScoreKind::Ood => ood_auroc(),
        ScoreKind::Avg => Ok(0.5 * (acc()? + ood_auroc()?)),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CircuitOptions {
    /// Evaluate candidates on a seeded subsample of at most this many ID and
    /// OOD samples; `None` uses all data.
    pub subsample: Option<usize>,
}

fn subsample(data: &[Sample], n: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    match n {
        Some(n) if n < data.len() => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(rng);
            idx.truncate(n);
            idx.sort_unstable();
            idx.into_iter().map(|i| data[i].clone()).collect()
        }
        _ => data.to_vec(),
    }
}

/// Greedy circuit extraction: at each step temporarily ablate every
/// admissible head, keep the ablation that maximizes the score, repeat until
/// the budget is spent. Ties go to the head earliest in the seeded order of
/// [`tie_ranks`]. Removals that would empty a layer are never considered.
pub fn extract_circuit<S: Scalar>(
    model: &Model<S>,
    budget: &PruneBudget,
    kind: ScoreKind,
    id: &[Sample],
    ood: &[Sample],
    seed: u64,
    opts: &CircuitOptions,
) -> Result<CircuitRanking> {
    let cfg = model.config;
    budget.validate(&cfg)?;
    let ranks = tie_ranks(cfg.layers, cfg.heads, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = subsample(id, opts.subsample, &mut rng);
    let ood = subsample(ood, opts.subsample, &mut rng);
    let full = HeadMask::for_config(&cfg);
    let mut work = model.clone();
    let mut alive = full.clone();
    let mut removed_per_layer = vec![0; cfg.layers];
    let mut ranking = CircuitRanking {
        kind,
        seed,
        removals: Vec::new(),
        trace: Vec::new(),
    };
    for _ in 0..budget.total() {
        let mut best: Option<(f64, usize, (usize, usize))> = None;
        for l in 0..cfg.layers {
            if !budget.admits(&removed_per_layer, l) {
                continue;
            }
            for h in 0..cfg.heads {
                if !alive.can_remove(l, h) {
                    continue;
                }
                let score = {
                    let ablated = ablate_temp(&mut work, l, h)?;
                    eval_score(&ablated, &full, kind, &id, &ood)?
                };
                let better = match best {
                    None => true,
                    Some((s, r, _)) => score > s || (score == s && ranks[l][h] < r),
                };
                if better {
                    best = Some((score, ranks[l][h], (l, h)));
                }
            }
        }
        let Some((score, _, (l, h))) = best else {
            return Err(Error::contract(
                "pruning",
                "no admissible head left to remove",
            ));
        };
        ablate_perm(&mut work, l, h)?;
        alive.remove(l, h)?;
        removed_per_layer[l] += 1;
        ranking.removals.push((l, h));
        ranking.trace.push(score);
    }
    Ok(ranking)
}

/// Draws a prune set meeting `budget` from the first entries of a ranking,
/// without replacement, with weight `1 + (R − i)/R` on the `i`-th of `R`
/// pooled removals so earlier removals are favoured.
pub fn sample_from_ranking(
    ranking: &[(usize, usize)],
    budget: &PruneBudget,
    layers: usize,
    heads: usize,
    seed: u64,
) -> Result<HeadMask> {
    let need = budget.total();
    let pool_len = ranking.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..pool_len)
        .map(|i| 1.0 + (pool_len - i) as f64 / pool_len as f64)
        .collect();
    let mut mask = HeadMask::full(layers, heads);
    let mut removed_per_layer = vec![0; layers];
    for _ in 0..need {
        for (i, &(l, _)) in ranking.iter().enumerate() {
            if !budget.admits(&removed_per_layer, l) {
                weights[i] = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::contract(
                "pruning",
                format!("ranking of {pool_len} heads cannot meet budget {need}"),
            ));
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = weights
            .iter()
            .rposition(|&w| w > 0.0)
            .expect("positive weight");
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        let (l, h) = ranking[pick];
        mask.remove(l, h)?;
        removed_per_layer[l] += 1;
        weights[pick] = 0.0;
    }
    Ok(mask)
}
