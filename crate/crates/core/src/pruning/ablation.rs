use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transformer::Model;

fn block(model: &Model<impl Scalar>, layer: usize, head: usize) -> Result<std::ops::Range<usize>> {
    let cfg = &model.config;
    if layer >= cfg.layers || head >= cfg.heads {
        return Err(Error::contract(
            "pruning",
            format!(
                "head ({layer}, {head}) out of range for {}x{}",
                cfg.layers, cfg.heads
            ),
        ));
    }
    // Head h owns rows [h·d_k, (h+1)·d_k) of the d×d output projection.
    let width = cfg.head_dim() * cfg.hidden;
    Ok(head * width..(head + 1) * width)
}

/// Zeroes the output-projection block of `(layer, head)` for as long as the
/// guard lives; dropping it restores the saved block bit for bit.
pub struct TempAblation<'m, S: Scalar> {
    model: &'m mut Model<S>,
    layer: usize,
    range: std::ops::Range<usize>,
    saved: Vec<S>,
}

pub fn ablate_temp<S: Scalar>(
    model: &mut Model<S>,
    layer: usize,
    head: usize,
) -> Result<TempAblation<'_, S>> {
    let range = block(model, layer, head)?;
    let data = model.weights.layers[layer].w_o.data_mut();
    let saved = data[range.clone()].to_vec();
    data[range.clone()].fill(S::zero());
    Ok(TempAblation {
        model,
        layer,
        range,
        saved,
    })
}

impl<S: Scalar> Deref for TempAblation<'_, S> {
    type Target = Model<S>;

    fn deref(&self) -> &Model<S> {
        self.model
    }
}

impl<S: Scalar> Drop for TempAblation<'_, S> {
    fn drop(&mut self) {
        self.model.weights.layers[self.layer].w_o.data_mut()[self.range.clone()]
            .copy_from_slice(&self.saved);
    }
}

/// Zeroes the output-projection block of `(layer, head)` permanently.
/// Repeating it is a no-op.
pub fn ablate_perm<S: Scalar>(model: &mut Model<S>, layer: usize, head: usize) -> Result<()> {
    let range = block(model, layer, head)?;
    model.weights.layers[layer].w_o.data_mut()[range].fill(S::zero());
    Ok(())
}
