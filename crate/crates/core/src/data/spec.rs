use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corruptions applied to the clean test split to form the noisy split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability that each token is replaced by a uniform in-distribution token.
    pub token_rate: f64,
    /// Probability that a label is replaced by a different class.
    pub label_flip: f64,
    /// Standard deviation of Gaussian jitter added to the input embeddings.
    /// Applied at forward time, see [`super::embedding_jitter`].
    pub embed_std: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            token_rate: 0.2,
            label_flip: 0.1,
            embed_std: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            token_rate: 0.0,
            label_flip: 0.0,
            embed_std: 0.0,
        }
    }
}

/// Generator parameters.
///
/// The vocabulary is laid out as `classes × topic_tokens` topic tokens (class
/// `c` owns the block starting at `c · topic_tokens`), then one signature token
/// per class, then `background_tokens` shared tokens, then `ood_tokens` tokens
/// that only out-of-distribution sequences use.
///
/// An in-distribution sequence of class `c` holds exactly one signature token
/// at a uniform position: its own with probability `signature_prob`, otherwise
/// uniform over all signatures. Every other position draws from class `c`'s
/// topic block with probability `own_topic`, from each other class's block
/// with probability `other_topic`, and from the background otherwise, uniform
/// within the chosen block.
///
/// An OOD sequence has no signature; each token is an OOD-only token with
/// probability `ood_rate` and otherwise uniform over topic and background
/// tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub classes: usize,
    pub seq_len: usize,
    pub topic_tokens: usize,
    pub background_tokens: usize,
    pub ood_tokens: usize,
    pub signature_prob: f64,
    pub own_topic: f64,
    pub other_topic: f64,
    pub ood_rate: f64,
    /// Lower bound enforced on the total-variation distance between the ID
    /// and OOD per-position token marginals.
    pub min_tv: f64,
    pub noise: NoiseSpec,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 4,
            seq_len: 16,
            topic_tokens: 8,
            background_tokens: 16,
            ood_tokens: 12,
            signature_prob: 0.6,
            own_topic: 0.35,
            other_topic: 0.04,
            ood_rate: 0.35,
            min_tv: 0.1,
            noise: NoiseSpec::default(),
        }
    }
}

impl TaskSpec {
    pub const DEFAULT_TRAIN: usize = 8192;
    pub const DEFAULT_TEST: usize = 2048;
    pub const DEFAULT_OOD: usize = 2048;

    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn vocab(&self) -> usize {
        self.classes * self.topic_tokens + self.classes + self.background_tokens + self.ood_tokens
    }

    pub(crate) fn signature_start(&self) -> usize {
        self.classes * self.topic_tokens
    }

    pub(crate) fn background_start(&self) -> usize {
        self.signature_start() + self.classes
    }

    pub(crate) fn ood_start(&self) -> usize {
        self.background_start() + self.background_tokens
    }

    /// Tokens that in-distribution sequences may contain outside the
    /// signature slot.
    pub(crate) fn id_pool(&self) -> Vec<usize> {
        (0..self.signature_start())
            .chain(self.background_start()..self.ood_start())
            .collect()
    }

    pub(crate) fn background_prob(&self) -> f64 {
        1.0 - self.own_topic - (self.classes as f64 - 1.0) * self.other_topic
    }

    /// Probability of a non-signature token under class `class`.
    pub fn token_prob(&self, class: usize, token: usize) -> f64 {
        let k = self.topic_tokens as f64;
        if token < self.signature_start() {
            let owner = token / self.topic_tokens;
            if owner == class {
                self.own_topic / k
            } else {
                self.other_topic / k
            }
        } else if (self.background_start()..self.ood_start()).contains(&token) {
            self.background_prob() / self.background_tokens as f64
        } else {
            0.0
        }
    }

    /// Probability of the signature slot holding `token` under class `class`.
    pub fn signature_token_prob(&self, class: usize, token: usize) -> f64 {
        if !(self.signature_start()..self.background_start()).contains(&token) {
            return 0.0;
        }
        let own = (token - self.signature_start() == class) as u8 as f64;
        self.signature_prob * own + (1.0 - self.signature_prob) / self.classes as f64
    }

    /// Per-position token marginal of in-distribution data under a uniform
    /// class prior, averaged over positions.
    pub fn id_marginal(&self) -> Vec<f64> {
        let t = self.seq_len as f64;
        let c = self.classes as f64;
        (0..self.vocab())
            .map(|tok| {
                (0..self.classes)
                    .map(|class| {
                        (self.signature_token_prob(class, tok)
                            + (t - 1.0) * self.token_prob(class, tok))
                            / (t * c)
                    })
                    .sum()
            })
            .collect()
    }

    pub fn ood_marginal(&self) -> Vec<f64> {
        let pool = self.id_pool();
        let mut p = vec![0.0; self.vocab()];
        for &tok in &pool {
            p[tok] = (1.0 - self.ood_rate) / pool.len() as f64;
        }
        for tok in self.ood_start()..self.vocab() {
            p[tok] = self.ood_rate / self.ood_tokens as f64;
        }
        p
    }

    /// Total-variation distance between the closed-form ID and OOD marginals.
    pub fn tv_distance(&self) -> f64 {
        0.5 * self
            .id_marginal()
            .iter()
            .zip(self.ood_marginal())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::contract("synth-data", msg));
        if self.classes < 2 || self.seq_len < 1 || self.topic_tokens < 1 {
            return err("need classes >= 2, seq_len >= 1, topic_tokens >= 1".into());
        }
        if self.background_tokens < 1 || self.ood_tokens < 1 {
            return err("need at least one background and one OOD-only token".into());
        }
        let probs = [
            ("signature_prob", self.signature_prob),
            ("own_topic", self.own_topic),
            ("other_topic", self.other_topic),
            ("ood_rate", self.ood_rate),
            ("noise.token_rate", self.noise.token_rate),
            ("noise.label_flip", self.noise.label_flip),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.background_prob() < 0.0 {
            return err("own_topic + (classes-1)*other_topic exceeds 1".into());
        }
        if !(self.noise.embed_std >= 0.0 && self.noise.embed_std.is_finite()) {
            return err("noise.embed_std must be finite and >= 0".into());
        }
        let tv = self.tv_distance();
        if tv < self.min_tv {
            return err(format!(
                "ID/OOD total variation {tv:.4} below required margin {}",
                self.min_tv
            ));
        }
        Ok(())
    }
}
