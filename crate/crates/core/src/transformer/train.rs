use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{embedding_jitter, Sample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::{HeadMask, Model, Weights};

/// Gaussian embedding perturbation drawn per sample index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub seed: u64,
    pub std: f64,
}

impl Jitter {
    /// Noise tensor of the sample at `index`.
    pub fn for_sample<S: Scalar>(&self, index: usize, rows: usize, hidden: usize) -> Tensor<S> {
        embedding_jitter(self.seed, index, rows, hidden, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Heavy-ball momentum coefficient; 0 gives plain SGD.
    pub momentum: f64,
    /// Seed of the minibatch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Mean cross-entropy over `data[indices]` and its gradient.
///
/// Per-sample gradients run in parallel and are summed in index order, so
/// the result does not depend on the thread count.
pub fn batch_loss_grad<S: Scalar>(
    model: &Model<S>,
    data: &[Sample],
    indices: &[usize],
    mask: &HeadMask,
    jitter: Option<Jitter>,
) -> Result<(S, Weights<Tensor<S>>)> {
    if indices.is_empty() {
        return Err(Error::contract("transformer", "empty batch"));
    }
    let per_sample: Vec<(S, Weights<Tensor<S>>)> = indices
        .par_iter()
        .map(|&i| {
            let s = data.get(i).ok_or_else(|| {
                Error::contract("transformer", format!("sample index {i} out of range"))
            })?;
            let label = s
                .label
                .ok_or_else(|| Error::contract("transformer", "training sample has no label"))?;
            let noise = jitter.map(|j| j.for_sample(i, s.tokens.len() + 1, model.config.hidden));
            model.loss_grad(&s.tokens, label, mask, noise.as_ref())
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grad.axpy(S::one(), &g)?;
    }
    let inv = S::one() / S::lit(indices.len() as f64);
    grad.scale_in_place(inv);
    Ok((loss * inv, grad))
}

/// Minibatch SGD on mean cross-entropy. Returns the updated model and the
/// batch loss observed before each step.
pub fn train_steps<S: Scalar>(
    mut model: Model<S>,
    data: &[Sample],
    mask: &HeadMask,
    cfg: &TrainConfig,
) -> Result<(Model<S>, Vec<f64>)> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::contract(
            "transformer",
            "learning rate must be finite and >= 0",
        ));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::contract(
            "transformer",
            "momentum must lie in [0, 1)",
        ));
    }
    if cfg.steps == 0 {
        return Ok((model, Vec::new()));
    }
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::contract(
            "transformer",
            "training needs data and batch_size >= 1",
        ));
    }
    mask.validate(&model.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut velocity = model.weights.zeros_like();
    let mut losses = Vec::with_capacity(cfg.steps);
    let lr = S::lit(cfg.lr);
    let momentum = S::lit(cfg.momentum);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (loss, grad) = batch_loss_grad(&model, data, &batch, mask, None)?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss,
                lr: cfg.lr,
            });
        }
        losses.push(loss);
        if cfg.momentum > 0.0 {
            velocity.scale_in_place(momentum);
            velocity.axpy(S::one(), &grad)?;
            model.weights.axpy(-lr, &velocity)?;
        } else {
            model.weights.axpy(-lr, &grad)?;
        }
    }
    Ok((model, losses))
}

/// Fraction of labelled samples whose argmax prediction is correct.
pub fn accuracy_on<S: Scalar>(model: &Model<S>, data: &[Sample], mask: &HeadMask) -> Result<f64> {
    let probs = model.predict(data, mask)?;
    let correct = probs
        .iter()
        .zip(data)
        .filter(|(p, s)| s.label == Some(argmax(p)))
        .count();
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
