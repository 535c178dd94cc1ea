use std::fmt;
use std::str::FromStr;

use super::budget::PruneBudget;
use super::circuit::{extract_circuit, sample_from_ranking, CircuitOptions, ScoreKind};
use super::taylor::{calibration_subset, taylor_prune, TaylorOptions};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transformer::{train_steps, HeadMask, Model, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Taylor-criterion pruning on a seed-dependent calibration subset.
    Taylor,
    /// Greedy circuit ranking, then a seed-dependent prune set drawn from it.
    Circuit,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Taylor => "taylor",
            Strategy::Circuit => "circuit",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor" => Ok(Strategy::Taylor),
            "circuit" => Ok(Strategy::Circuit),
            other => Err(Error::contract(
                "pruning",
                format!("unknown strategy {other:?}"),
            )),
        }
    }
}

/// Data used while building members.
#[derive(Clone, Copy, Debug)]
pub struct MemberData<'a> {
    /// Calibration pool for Taylor scoring and fine-tuning set.
    pub train: &'a [Sample],
    /// Validation data for circuit scores.
    pub id_val: &'a [Sample],
    pub ood_val: &'a [Sample],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberOptions {
    pub score: ScoreKind,
    pub taylor: TaylorOptions,
    /// Calibration samples drawn per member for Taylor scoring.
    pub calib_size: usize,
    /// Depth of the circuit ranking the prune sets are drawn from; `None`
    /// uses `⌈1.5·B⌉` capped by the one-survivor rule.
    pub ranking_depth: Option<usize>,
    pub circuit: CircuitOptions,
    /// Independent fine-tuning of each pruned member.
    pub finetune: Option<TrainConfig>,
}

impl Default for MemberOptions {
    fn default() -> Self {
        Self {
            score: ScoreKind::Avg,
            taylor: TaylorOptions::default(),
            calib_size: 256,
            ranking_depth: None,
            circuit: CircuitOptions::default(),
            finetune: None,
        }
    }
}

/// One pruned ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct Member<S> {
    pub mask: HeadMask,
    pub model: Model<S>,
}

fn pool_budget(
    budget: &PruneBudget,
    depth: Option<usize>,
    layers: usize,
    heads: usize,
) -> PruneBudget {
    let widen = |n: usize| depth.unwrap_or((3 * n).div_ceil(2));
    match budget {
        PruneBudget::Global(b) => PruneBudget::Global(widen(*b).max(*b).min(layers * (heads - 1))),
        PruneBudget::PerLayer(r) => {
            PruneBudget::PerLayer(r.iter().map(|&n| widen(n).max(n).min(heads - 1)).collect())
        }
    }
}

/// Builds `seeds.len()` pruned members of `model`.
///
/// The circuit strategy ranks heads once (tie-break seed `seeds[0]`) and
/// draws each member's prune set from the ranking with that member's seed.
pub fn make_members<S: Scalar>(
    model: &Model<S>,
    strategy: Strategy,
    seeds: &[u64],
    budget: &PruneBudget,
    data: MemberData<'_>,
    opts: &MemberOptions,
) -> Result<Vec<Member<S>>> {
    if seeds.is_empty() {
        return Err(Error::contract("pruning", "need at least one member seed"));
    }
    let cfg = model.config;
    budget.validate(&cfg)?;
    let masks: Vec<HeadMask> = match strategy {
        Strategy::Taylor => seeds
            .iter()
            .map(|&seed| {
                let calib = calibration_subset(data.train, opts.calib_size, seed);
                taylor_prune(model, budget, &calib, seed, &opts.taylor)
            })
            .collect::<Result<_>>()?,
        Strategy::Circuit => {
            let pool = pool_budget(budget, opts.ranking_depth, cfg.layers, cfg.heads);
            let ranking = extract_circuit(
                model,
                &pool,
                opts.score,
                data.id_val,
                data.ood_val,
                seeds[0],
                &opts.circuit,
            )?;
            seeds
                .iter()
                .map(|&seed| {
                    sample_from_ranking(&ranking.removals, budget, cfg.layers, cfg.heads, seed)
                })
                .collect::<Result<_>>()?
        }
    };
    masks
        .into_iter()
        .zip(seeds)
        .map(|(mask, &seed)| {
            let model = match &opts.finetune {
                Some(tc) => {
                    let tc = TrainConfig { seed, ..*tc };
                    train_steps(model.clone(), data.train, &mask, &tc)?.0
                }
                None => model.clone(),
            };
            Ok(Member { mask, model })
        })
        .collect()
}
