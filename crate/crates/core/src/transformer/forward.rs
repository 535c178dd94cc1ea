//! Pre-norm encoder forward pass, written once over [`Ops`] so the same code
//! serves inference ([`Eager`]) and differentiation ([`Tape`]).

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{Eager, Ops, Tape, Tensor};
use crate::scalar::Scalar;
use crate::transformer::mask::surviving;
use crate::transformer::{HeadMask, Jitter, LayerWeights, Model, TransformerConfig, Weights};

/// How a head mask is applied inside multi-head attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Realization {
    /// Keep every projection; zero the `W_O` row blocks of dead heads.
    Ablation,
    /// Slice `Q/K/V` column blocks and `W_O` row blocks down to the survivors.
    #[default]
    Structural,
}

/// Column indices covered by the given heads.
pub(crate) fn head_columns(heads: &[usize], d_k: usize) -> Vec<usize> {
    heads.iter().flat_map(|&h| h * d_k..(h + 1) * d_k).collect()
}

/// Per-head attention outputs `Z_h = softmax(Q_h K_hᵀ / √d_k) V_h` for projections
/// of width `n_heads · d_k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn head_outputs<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    x_hat: &O::Var,
    w_q: &O::Var,
    b_q: &O::Var,
    w_k: &O::Var,
    b_k: &O::Var,
    w_v: &O::Var,
    b_v: &O::Var,
    n_heads: usize,
    d_k: usize,
) -> Result<Vec<O::Var>> {
    let q = ops.matmul(x_hat, w_q)?;
    let q = ops.add_row(&q, b_q)?;
    let k = ops.matmul(x_hat, w_k)?;
    let k = ops.add_row(&k, b_k)?;
    let v = ops.matmul(x_hat, w_v)?;
    let v = ops.add_row(&v, b_v)?;
    let scale = S::lit(1.0 / (d_k as f64).sqrt());
    let mut out = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (
                ops.slice_cols(&q, h * d_k, d_k)?,
                ops.slice_cols(&k, h * d_k, d_k)?,
                ops.slice_cols(&v, h * d_k, d_k)?,
            )
        };
        let scores = ops.matmul_t(&qh, &kh)?;
        let scores = ops.scale(&scores, scale);
        let attn = ops.softmax_rows(&scores);
        out.push(ops.matmul(&attn, &vh)?);
    }
    Ok(out)
}

/// Attention over `n_heads` heads followed by the output projection.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    x_hat: &O::Var,
    w_q: &O::Var,
    b_q: &O::Var,
    w_k: &O::Var,
    b_k: &O::Var,
    w_v: &O::Var,
    b_v: &O::Var,
    w_o: &O::Var,
    b_o: &O::Var,
    n_heads: usize,
    d_k: usize,
) -> Result<O::Var> {
    let zs = head_outputs(ops, x_hat, w_q, b_q, w_k, b_k, w_v, b_v, n_heads, d_k)?;
    let z = if zs.len() == 1 {
        zs[0].clone()
    } else {
        ops.concat_cols(&zs)?
    };
    let out = ops.matmul(&z, w_o)?;
    ops.add_row(&out, b_o)
}

/// Projections of one layer restricted to the surviving heads of `mask_row`.
pub(crate) struct SlicedProjections<V> {
    pub w_q: V,
    pub b_q: V,
    pub w_k: V,
    pub b_k: V,
    pub w_v: V,
    pub b_v: V,
    pub w_o: V,
    pub heads: usize,
}

pub(crate) fn slice_projections<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    layer: &LayerWeights<O::Var>,
    mask_row: &[bool],
    d_k: usize,
) -> Result<SlicedProjections<O::Var>> {
    let alive = surviving(mask_row);
    if alive.is_empty() {
        return Err(Error::contract(
            "transformer",
            "mask row has no surviving head",
        ));
    }
    if alive.len() == mask_row.len() {
        return Ok(SlicedProjections {
            w_q: layer.w_q.clone(),
            b_q: layer.b_q.clone(),
            w_k: layer.w_k.clone(),
            b_k: layer.b_k.clone(),
            w_v: layer.w_v.clone(),
            b_v: layer.b_v.clone(),
            w_o: layer.w_o.clone(),
            heads: alive.len(),
        });
    }
    let cols = head_columns(&alive, d_k);
    Ok(SlicedProjections {
        w_q: ops.gather_cols(&layer.w_q, &cols)?,
        b_q: ops.gather_cols(&layer.b_q, &cols)?,
        w_k: ops.gather_cols(&layer.w_k, &cols)?,
        b_k: ops.gather_cols(&layer.b_k, &cols)?,
        w_v: ops.gather_cols(&layer.w_v, &cols)?,
        b_v: ops.gather_cols(&layer.b_v, &cols)?,
        w_o: ops.gather_rows(&layer.w_o, &cols)?,
        heads: alive.len(),
    })
}

/// Multi-head attention of one layer under a head mask row.
pub fn mha<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    x_hat: &O::Var,
    layer: &LayerWeights<O::Var>,
    mask_row: &[bool],
    d_k: usize,
    realization: Realization,
) -> Result<O::Var> {
    let n_heads = mask_row.len();
    if !mask_row.iter().any(|&b| b) {
        return Err(Error::contract(
            "transformer",
            "mask row has no surviving head",
        ));
    }
    match realization {
        Realization::Structural => {
            let p = slice_projections(ops, layer, mask_row, d_k)?;
            attention(
                ops, x_hat, &p.w_q, &p.b_q, &p.w_k, &p.b_k, &p.w_v, &p.b_v, &p.w_o, &layer.b_o,
                p.heads, d_k,
            )
        }
        Realization::Ablation => {
            let w_o = if mask_row.iter().all(|&b| b) {
                layer.w_o.clone()
            } else {
                let shape = ops.value(&layer.w_o).shape().to_vec();
                let cols = shape[1];
                let keep = Tensor::from_fn(&shape, |i| {
                    if mask_row[(i / cols) / d_k] {
                        S::one()
                    } else {
                        S::zero()
                    }
                });
                let keep = ops.constant(keep);
                ops.mul(&layer.w_o, &keep)?
            };
            attention(
                ops, x_hat, &layer.w_q, &layer.b_q, &layer.w_k, &layer.b_k, &layer.w_v, &layer.b_v,
                &w_o, &layer.b_o, n_heads, d_k,
            )
        }
    }
}

/// `MLP(x) = GELU(x·W1 + b1)·W2 + b2`
pub(crate) fn mlp<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    x: &O::Var,
    w1: &O::Var,
    b1: &O::Var,
    w2: &O::Var,
    b2: &O::Var,
) -> Result<O::Var> {
    let h = ops.matmul(x, w1)?;
    let h = ops.add_row(&h, b1)?;
    let h = ops.gelu(&h);
    let o = ops.matmul(&h, w2)?;
    ops.add_row(&o, b2)
}

/// One pre-norm layer: `Y = X + MHA(LN1(X))`, `X' = Y + MLP(LN2(Y))`.
pub fn layer_forward<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    x: &O::Var,
    layer: &LayerWeights<O::Var>,
    mask_row: &[bool],
    d_k: usize,
    eps: S,
    realization: Realization,
) -> Result<O::Var> {
    let x_hat = ops.layernorm(x, &layer.ln1_gamma, &layer.ln1_beta, eps)?;
    let att = mha(ops, &x_hat, layer, mask_row, d_k, realization)?;
    let y = ops.add(x, &att)?;
    let y_hat = ops.layernorm(&y, &layer.ln2_gamma, &layer.ln2_beta, eps)?;
    let m = mlp(ops, &y_hat, &layer.w1, &layer.b1, &layer.w2, &layer.b2)?;
    ops.add(&y, &m)
}

pub(crate) fn check_tokens(cfg: &TransformerConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() || tokens.len() > cfg.seq_len {
        return Err(Error::contract(
            "transformer",
            format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                cfg.seq_len
            ),
        ));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab) {
        return Err(Error::contract(
            "transformer",
            format!("token {t} out of range for vocabulary {}", cfg.vocab),
        ));
    }
    Ok(())
}

/// `[cls; E[tokens]] + P`, plus an optional constant perturbation.
pub(crate) fn embed<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    tok_emb: &O::Var,
    pos_emb: &O::Var,
    cls: &O::Var,
    tokens: &[usize],
    jitter: Option<&Tensor<S>>,
) -> Result<O::Var> {
    let tok = ops.gather_rows(tok_emb, tokens)?;
    let x = ops.concat_rows(&[cls.clone(), tok])?;
    let rows = tokens.len() + 1;
    let pos = if ops.value(pos_emb).rows() == rows {
        pos_emb.clone()
    } else {
        ops.slice_rows(pos_emb, 0, rows)?
    };
    let x = ops.add(&x, &pos)?;
    match jitter {
        Some(noise) => {
            let n = ops.constant(noise.clone());
            ops.add(&x, &n)
        }
        None => Ok(x),
    }
}

/// Final layernorm and linear head on row `row` (a classification token).
#[allow(clippy::too_many_arguments)]
pub(crate) fn classify<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    final_gamma: &O::Var,
    final_beta: &O::Var,
    head_w: &O::Var,
    head_b: &O::Var,
    hidden: &O::Var,
    row: usize,
    eps: S,
) -> Result<O::Var> {
    let cls = ops.slice_rows(hidden, row, 1)?;
    let cls = ops.layernorm(&cls, final_gamma, final_beta, eps)?;
    let logits = ops.matmul(&cls, head_w)?;
    ops.add_row(&logits, head_b)
}

pub(crate) fn bind<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    w: &'a Weights<Tensor<S>>,
) -> Weights<O::Var> {
    w.map(|t| ops.leaf(t))
}

/// Full model forward to a `1 × C` logit row.
pub fn model_logits<'a, S: Scalar, O: Ops<'a, S>>(
    ops: &mut O,
    cfg: &TransformerConfig,
    w: &Weights<O::Var>,
    tokens: &[usize],
    mask: &HeadMask,
    realization: Realization,
    jitter: Option<&Tensor<S>>,
) -> Result<O::Var> {
    check_tokens(cfg, tokens)?;
    mask.validate(cfg)?;
    let eps = S::lit(cfg.ln_eps);
    let mut x = embed(ops, &w.tok_emb, &w.pos_emb, &w.cls, tokens, jitter)?;
    for (l, layer) in w.layers.iter().enumerate() {
        x = layer_forward(
            ops,
            &x,
            layer,
            mask.row(l),
            cfg.head_dim(),
            eps,
            realization,
        )?;
    }
    classify(
        ops,
        &w.final_gamma,
        &w.final_beta,
        &w.head_w,
        &w.head_b,
        &x,
        0,
        eps,
    )
}

/// Eager single-layer forward with every head alive.
pub fn forward_layer<S: Scalar>(
    x: &Tensor<S>,
    layer: &LayerWeights<Tensor<S>>,
    cfg: &TransformerConfig,
) -> Result<Tensor<S>> {
    let mask = vec![true; cfg.heads];
    forward_layer_masked(x, layer, cfg, &mask, Realization::Structural)
}

pub fn forward_layer_masked<S: Scalar>(
    x: &Tensor<S>,
    layer: &LayerWeights<Tensor<S>>,
    cfg: &TransformerConfig,
    mask_row: &[bool],
    realization: Realization,
) -> Result<Tensor<S>> {
    if x.cols() != cfg.hidden {
        return Err(Error::shape(
            "forward_layer",
            format!("input {:?} for hidden size {}", x.shape(), cfg.hidden),
        ));
    }
    let mut ops = Eager;
    let lw = layer.map(|t| Ops::<S>::leaf(&mut ops, t));
    let xv = Ops::<S>::leaf(&mut ops, x);
    let out = layer_forward(
        &mut ops,
        &xv,
        &lw,
        mask_row,
        cfg.head_dim(),
        S::lit(cfg.ln_eps),
        realization,
    )?;
    Ok(out.into_owned())
}

/// Eager multi-head attention of a single layer.
pub fn mha_eager<S: Scalar>(
    x_hat: &Tensor<S>,
    layer: &LayerWeights<Tensor<S>>,
    mask_row: &[bool],
    d_k: usize,
    realization: Realization,
) -> Result<Tensor<S>> {
    let mut ops = Eager;
    let lw = layer.map(|t| Ops::<S>::leaf(&mut ops, t));
    let xv = Ops::<S>::leaf(&mut ops, x_hat);
    Ok(mha(&mut ops, &xv, &lw, mask_row, d_k, realization)?.into_owned())
}

impl<S: Scalar> Model<S> {
    /// Logits (length `C`) for one token sequence.
    pub fn logits(&self, tokens: &[usize], mask: &HeadMask) -> Result<Vec<S>> {
        self.logits_with(tokens, mask, Realization::Structural, None)
    }

    pub fn logits_with(
        &self,
        tokens: &[usize],
        mask: &HeadMask,
        realization: Realization,
        jitter: Option<&Tensor<S>>,
    ) -> Result<Vec<S>> {
        let mut ops = Eager;
        let w = bind(&mut ops, &self.weights);
        let out = model_logits(
            &mut ops,
            &self.config,
            &w,
            tokens,
            mask,
            realization,
            jitter,
        )?;
        Ok(out.into_owned().into_data())
    }

    /// Class probabilities for one token sequence.
    pub fn probs(&self, tokens: &[usize], mask: &HeadMask) -> Result<Vec<S>> {
        let logits = self.logits(tokens, mask)?;
        Ok(Tensor::vector(logits).softmax_rows().into_data())
    }

    /// Probabilities for every sample, evaluated in parallel.
    pub fn predict(&self, samples: &[Sample], mask: &HeadMask) -> Result<Vec<Vec<S>>> {
        samples
            .par_iter()
            .map(|s| self.probs(&s.tokens, mask))
            .collect()
    }

    /// Probabilities for every sample, with per-sample embedding noise drawn
    /// from `jitter` by sample index.
    pub fn predict_with(
        &self,
        samples: &[Sample],
        mask: &HeadMask,
        jitter: Option<Jitter>,
    ) -> Result<Vec<Vec<S>>> {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let noise = jitter.map(|j| j.for_sample(i, s.tokens.len() + 1, self.config.hidden));
                let logits =
                    self.logits_with(&s.tokens, mask, Realization::Structural, noise.as_ref())?;
                Ok(Tensor::vector(logits).softmax_rows().into_data())
            })
            .collect()
    }

    /// Cross-entropy of one labelled sequence and its gradient for every
    /// parameter.
    pub fn loss_grad(
        &self,
        tokens: &[usize],
        label: usize,
        mask: &HeadMask,
        jitter: Option<&Tensor<S>>,
    ) -> Result<(S, Weights<Tensor<S>>)> {
        let mut tape = Tape::new();
        let w = bind(&mut tape, &self.weights);
        let logits = model_logits(
            &mut tape,
            &self.config,
            &w,
            tokens,
            mask,
            Realization::Structural,
            jitter,
        )?;
        let loss = tape.cross_entropy(&logits, label)?;
        let grads = tape.backward(loss)?;
        let value = tape.value(&loss).data()[0];
        Ok((value, w.map(|v| grads.wrt(*v))))
    }
}

/// Per-head outputs `Z_h` at the classification-token row of `layer`, for the
/// heads surviving in `mask`.
pub fn cls_head_outputs<S: Scalar>(
    model: &Model<S>,
    tokens: &[usize],
    mask: &HeadMask,
    layer: usize,
) -> Result<Vec<(usize, Vec<S>)>> {
    let cfg = &model.config;
    if layer >= cfg.layers {
        return Err(Error::contract(
            "transformer",
            format!("layer {layer} out of range for {} layers", cfg.layers),
        ));
    }
    check_tokens(cfg, tokens)?;
    mask.validate(cfg)?;
    let mut ops = Eager;
    let w = bind(&mut ops, &model.weights);
    let eps = S::lit(cfg.ln_eps);
    let d_k = cfg.head_dim();
    let mut x = embed(&mut ops, &w.tok_emb, &w.pos_emb, &w.cls, tokens, None)?;
    for l in 0..layer {
        x = layer_forward(
            &mut ops,
            &x,
            &w.layers[l],
            mask.row(l),
            d_k,
            eps,
            Realization::Structural,
        )?;
    }
    let lw = &w.layers[layer];
    let x_hat = ops.layernorm(&x, &lw.ln1_gamma, &lw.ln1_beta, eps)?;
    let p = slice_projections(&mut ops, lw, mask.row(layer), d_k)?;
    let zs = head_outputs(
        &mut ops, &x_hat, &p.w_q, &p.b_q, &p.w_k, &p.b_k, &p.w_v, &p.b_v, p.heads, d_k,
    )?;
    Ok(mask
        .survivors(layer)
        .into_iter()
        .zip(zs)
        .map(|(h, z)| (h, z.row(0).to_vec()))
        .collect())
}
