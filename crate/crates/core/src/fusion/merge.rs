use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::LayerWeights;

/// MLP weights shared by every fused stream of a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedMlp<S> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

/// Entrywise mean. Entries on which all inputs agree are copied unchanged,
/// so merging identical tensors is exact.
fn mean<S: Scalar>(parts: &[&Tensor<S>], name: &str) -> Result<Tensor<S>> {
    let first = parts[0];
    if let Some(bad) = parts.iter().find(|t| t.shape() != first.shape()) {
        return Err(Error::contract(
            "fusion",
            format!(
                "MLP {name} shape {:?} differs from {:?}",
                bad.shape(),
                first.shape()
            ),
        ));
    }
    let m = S::lit(parts.len() as f64);
    let data = (0..first.len())
        .map(|i| {
            let x = first.data()[i];
            if parts.iter().all(|t| t.data()[i] == x) {
                x
            } else {
                parts.iter().map(|t| t.data()[i]).sum::<S>() / m
            }
        })
        .collect();
    Tensor::new(first.shape().to_vec(), data)
}

/// Arithmetic mean of the members' MLP weights and biases.
pub fn merge_mlp<S: Scalar>(members: &[&LayerWeights<Tensor<S>>]) -> Result<MergedMlp<S>> {
    if members.is_empty() {
        return Err(Error::contract("fusion", "cannot merge zero MLPs"));
    }
    let pick = |f: fn(&LayerWeights<Tensor<S>>) -> &Tensor<S>| -> Vec<&Tensor<S>> {
        members.iter().map(|w| f(w)).collect()
    };
    Ok(MergedMlp {
        w1: mean(&pick(|w| &w.w1), "W1")?,
        b1: mean(&pick(|w| &w.b1), "b1")?,
        w2: mean(&pick(|w| &w.w2), "W2")?,
        b2: mean(&pick(|w| &w.b2), "b2")?,
    })
}
