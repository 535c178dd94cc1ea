//! Synthetic sequence-classification tasks with clean, noisy and
//! out-of-distribution splits.

mod bayes;
mod format;
mod generate;
mod spec;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use bayes::{bayes_posterior, bayes_predict, bayes_rate};
pub use format::{read_dataset, write_dataset};
pub use generate::{embedding_jitter, generate};
pub use spec::{NoiseSpec, TaskSpec};

/// One token sequence. OOD samples carry no label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub label: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Noisy,
    Ood,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Test, Split::Noisy, Split::Ood];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Noisy => "noisy",
            Split::Ood => "ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| Error::contract("synth-data", format!("unknown split {s:?}")))
    }
}

/// A generated split together with the header fields of its file form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub vocab: usize,
    pub classes: usize,
    pub seq_len: usize,
    pub split: Split,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels of every sample; fails on unlabelled (OOD) data.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::contract("synth-data", "sample has no label"))
            })
            .collect()
    }
}
