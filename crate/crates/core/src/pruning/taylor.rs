use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::budget::{tie_ranks, PruneBudget};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::{batch_loss_grad, HeadMask, Model, TransformerConfig, Weights};

pub const DEFAULT_CALIB_BATCH: usize = 64;

/// First-order Taylor importance of one head and its Q/K/V components.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub score: f64,
    pub q: f64,
    pub k: f64,
    pub v: f64,
}

impl HeadScore {
    pub fn new(layer: usize, head: usize, q: f64, k: f64, v: f64) -> Self {
        Self {
            layer,
            head,
            score: (q + k + v) / 3.0,
            q,
            k,
            v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaylorOptions {
    pub batch_size: usize,
    /// Recompute gradients on the pruned model before scoring each layer.
    pub recompute: bool,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_CALIB_BATCH,
            recompute: true,
        }
    }
}

/// `(1 / (d_k·d)) Σ |W ⊙ G|` over the head's column block of a `d × d` projection.
fn block_mass<S: Scalar>(w: &Tensor<S>, g: &Tensor<S>, head: usize, d_k: usize) -> f64 {
    let d = w.rows();
    let mut total = 0.0;
    for r in 0..d {
        let (wr, gr) = (w.row(r), g.row(r));
        for c in head * d_k..(head + 1) * d_k {
            total += (wr[c] * gr[c]).abs().to_f64_lossy();
        }
    }
    total / (d_k * d) as f64
}

/// Scores of every head from parameter values and loss gradients.
pub fn head_scores_from_gradients<S: Scalar>(
    cfg: &TransformerConfig,
    weights: &Weights<Tensor<S>>,
    grads: &Weights<Tensor<S>>,
) -> Vec<HeadScore> {
    let d_k = cfg.head_dim();
    let mut out = Vec::with_capacity(cfg.layers * cfg.heads);
    for (l, (w, g)) in weights.layers.iter().zip(&grads.layers).enumerate() {
        for h in 0..cfg.heads {
            out.push(HeadScore::new(
                l,
                h,
                block_mass(&w.w_q, &g.w_q, h, d_k),
                block_mass(&w.w_k, &g.w_k, h, d_k),
                block_mass(&w.w_v, &g.w_v, h, d_k),
            ));
        }
    }
    out
}

/// Gradient of the mean cross-entropy, as the average of per-batch means.
pub(crate) fn calibration_gradient<S: Scalar>(
    model: &Model<S>,
    mask: &HeadMask,
    calib: &[Sample],
    batch_size: usize,
) -> Result<Weights<Tensor<S>>> {
    if calib.is_empty() {
        return Err(Error::contract("pruning", "empty calibration set"));
    }
    if batch_size == 0 {
        return Err(Error::contract(
            "pruning",
            "calibration batch size must be >= 1",
        ));
    }
    let idx: Vec<usize> = (0..calib.len()).collect();
    let batches: Vec<&[usize]> = idx.chunks(batch_size).collect();
    let mut total = model.weights.zeros_like();
    for b in &batches {
        let (_, g) = batch_loss_grad(model, calib, b, mask, None)?;
        total.axpy(S::one(), &g)?;
    }
    total.scale_in_place(S::one() / S::lit(batches.len() as f64));
    Ok(total)
}

/// Taylor scores of every head under `mask` on the calibration set.
pub fn taylor_scores<S: Scalar>(
    model: &Model<S>,
    mask: &HeadMask,
    calib: &[Sample],
    batch_size: usize,
) -> Result<Vec<HeadScore>> {
    let grads = calibration_gradient(model, mask, calib, batch_size)?;
    Ok(head_scores_from_gradients(
        &model.config,
        &model.weights,
        &grads,
    ))
}

/// Heads of `candidates` ordered from least to most important.
fn ascending(candidates: Vec<&HeadScore>, ranks: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut c = candidates;
    c.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(ranks[a.layer][a.head].cmp(&ranks[b.layer][b.head]))
    });
    c.into_iter().map(|s| (s.layer, s.head)).collect()
}

/// Prunes the lowest-scoring heads. A per-layer budget walks the layers in
/// order, rescoring the partially pruned model before each layer when
/// `opts.recompute` is set; a global budget scores once and removes the
/// lowest heads overall, skipping any removal that would empty a layer.
pub fn taylor_prune<S: Scalar>(
    model: &Model<S>,
    budget: &PruneBudget,
    calib: &[Sample],
    seed: u64,
    opts: &TaylorOptions,
) -> Result<HeadMask> {
    let cfg = &model.config;
    budget.validate(cfg)?;
    let ranks = tie_ranks(cfg.layers, cfg.heads, seed);
    let mut mask = HeadMask::for_config(cfg);
    if budget.total() == 0 {
        return Ok(mask);
    }
    match budget {
        PruneBudget::PerLayer(r) => {
            let mut scores = taylor_scores(model, &mask, calib, opts.batch_size)?;
            for (l, &n) in r.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                if opts.recompute && l > 0 {
                    scores = taylor_scores(model, &mask, calib, opts.batch_size)?;
                }
                let layer_scores = scores.iter().filter(|s| s.layer == l).collect();
                for (l, h) in ascending(layer_scores, &ranks).into_iter().take(n) {
                    mask.remove(l, h)?;
                }
            }
        }
        PruneBudget::Global(b) => {
            let scores = taylor_scores(model, &mask, calib, opts.batch_size)?;
            let mut left = *b;
            for (l, h) in ascending(scores.iter().collect(), &ranks) {
                if left == 0 {
                    break;
                }
                if mask.can_remove(l, h) {
                    mask.remove(l, h)?;
                    left -= 1;
                }
            }
        }
    }
    Ok(mask)
}

/// Seed-dependent calibration subset of at most `size` samples.
pub fn calibration_subset(data: &[Sample], size: usize, seed: u64) -> Vec<Sample> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(size.min(data.len()));
    idx.into_iter().map(|i| data[i].clone()).collect()
}
