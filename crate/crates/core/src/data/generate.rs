use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample, Split, TaskSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

const NOISE_STREAM: u64 = 16;
const JITTER_STREAM_BASE: u64 = 1 << 32;

fn stream(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        // The noisy split corrupts the test sequences, so both share a stream.
        Split::Test | Split::Noisy => 2,
        Split::Ood => 3,
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn id_sample(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Sample {
    let c = rng.random_range(0..spec.classes);
    let sig_pos = rng.random_range(0..spec.seq_len);
    let tokens = (0..spec.seq_len)
        .map(|pos| {
            if pos == sig_pos {
                let sig = if rng.random::<f64>() < spec.signature_prob {
                    c
                } else {
                    rng.random_range(0..spec.classes)
                };
                return spec.signature_start() + sig;
            }
            let u = rng.random::<f64>();
            let owner = if u < spec.own_topic {
                Some(c)
            } else {
                let j = ((u - spec.own_topic) / spec.other_topic.max(f64::MIN_POSITIVE)) as usize;
                if j < spec.classes - 1 {
                    Some(if j < c { j } else { j + 1 })
                } else {
                    None
                }
            };
            match owner {
                Some(o) => o * spec.topic_tokens + rng.random_range(0..spec.topic_tokens),
                None => spec.background_start() + rng.random_range(0..spec.background_tokens),
            }
        })
        .collect();
    Sample {
        tokens,
        label: Some(c),
    }
}

fn ood_sample(spec: &TaskSpec, pool: &[usize], rng: &mut ChaCha8Rng) -> Sample {
    let tokens = (0..spec.seq_len)
        .map(|_| {
            if rng.random::<f64>() < spec.ood_rate {
                spec.ood_start() + rng.random_range(0..spec.ood_tokens)
            } else {
                *pool.choose(rng).expect("non-empty pool")
            }
        })
        .collect();
    Sample {
        tokens,
        label: None,
    }
}

fn corrupt(spec: &TaskSpec, samples: &mut [Sample]) {
    let mut rng = rng_for(spec.seed, NOISE_STREAM);
    let pool = spec.id_pool();
    for s in samples {
        for tok in &mut s.tokens {
            if rng.random::<f64>() < spec.noise.token_rate {
                *tok = *pool.choose(&mut rng).expect("non-empty pool");
            }
        }
        if let Some(label) = s.label.as_mut() {
            if rng.random::<f64>() < spec.noise.label_flip {
                let other = rng.random_range(0..spec.classes - 1);
                *label = if other < *label { other } else { other + 1 };
            }
        }
    }
}

/// Draws `n` samples of `split`; deterministic in `(spec, split, n)`.
pub fn generate(spec: &TaskSpec, n: usize, split: Split) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::contract("synth-data", "sample count must be >= 1"));
    }
    let mut rng = rng_for(spec.seed, stream(split));
    let pool = spec.id_pool();
    let mut samples: Vec<Sample> = (0..n)
        .map(|_| match split {
            Split::Ood => ood_sample(spec, &pool, &mut rng),
            _ => id_sample(spec, &mut rng),
        })
        .collect();
    if split == Split::Noisy {
        corrupt(spec, &mut samples);
    }
    Ok(Dataset {
        vocab: spec.vocab(),
        classes: spec.classes,
        seq_len: spec.seq_len,
        split,
        seed: spec.seed,
        samples,
    })
}

/// Gaussian perturbation of the `rows × hidden` input embeddings of sample
/// `index`, deterministic in `(seed, index)`.
pub fn embedding_jitter<S: Scalar>(
    seed: u64,
    index: usize,
    rows: usize,
    hidden: usize,
    std: f64,
) -> Tensor<S> {
    let mut rng = rng_for(seed, JITTER_STREAM_BASE + index as u64);
    Tensor::randn(&[rows, hidden], std, &mut rng)
}
