use std::borrow::Cow;

use rayon::prelude::*;

use super::merge::{merge_mlp, MergedMlp};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{Eager, Tensor};
use crate::pruning::Member;
use crate::scalar::Scalar;
use crate::transformer::{
    attention, check_tokens, classify, embed, head_columns, mlp, HeadMask, Jitter, LayerWeights,
    Model, TransformerConfig, Weights,
};

fn cow<S: Clone>(t: &Tensor<S>) -> Cow<'_, Tensor<S>> {
    Cow::Borrowed(t)
}

/// One member's attention projections restricted to its surviving heads.
/// With `d_l = H_l · d_k`: `W_Q/W_K/W_V` are `d × d_l`, `W_O` is `d_l × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberAttention<S> {
    /// Original indices of the surviving heads, ascending.
    pub heads: Vec<usize>,
    pub w_q: Tensor<S>,
    pub b_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub b_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub b_v: Tensor<S>,
    pub w_o: Tensor<S>,
    pub b_o: Tensor<S>,
}

impl<S: Scalar> MemberAttention<S> {
    fn slice(w: &LayerWeights<Tensor<S>>, heads: Vec<usize>, d_k: usize) -> Result<Self> {
        let cols = head_columns(&heads, d_k);
        Ok(Self {
            w_q: w.w_q.gather_cols(&cols)?,
            b_q: w.b_q.gather_cols(&cols)?,
            w_k: w.w_k.gather_cols(&cols)?,
            b_k: w.b_k.gather_cols(&cols)?,
            w_v: w.w_v.gather_cols(&cols)?,
            b_v: w.b_v.gather_cols(&cols)?,
            w_o: w.w_o.gather_rows(&cols)?,
            b_o: w.b_o.clone(),
            heads,
        })
    }

    /// Projection width `d_l`.
    pub fn width(&self) -> usize {
        self.w_q.cols()
    }

    /// `[(name, tensor)]` in storage order.
    pub fn named(&self) -> [(&'static str, &Tensor<S>); 8] {
        [
            ("W_Q", &self.w_q),
            ("W_K", &self.w_k),
            ("W_V", &self.w_v),
            ("W_O", &self.w_o),
            ("b_Q", &self.b_q),
            ("b_K", &self.b_k),
            ("b_V", &self.b_v),
            ("b_O", &self.b_o),
        ]
    }
}

/// A fused layer: per-member attention, one merged MLP, shared layernorms.
#[derive(Clone, Debug, PartialEq)]
pub struct HydraLayer<S> {
    pub members: Vec<MemberAttention<S>>,
    pub mlp: MergedMlp<S>,
    pub ln1_gamma: Tensor<S>,
    pub ln1_beta: Tensor<S>,
    pub ln2_gamma: Tensor<S>,
    pub ln2_beta: Tensor<S>,
}

/// `M` pruned members fused into one model. Embeddings, layernorms and the
/// classifier are shared; the member masks are kept as metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct HydraModel<S> {
    pub config: TransformerConfig,
    pub masks: Vec<HeadMask>,
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub cls: Tensor<S>,
    pub layers: Vec<HydraLayer<S>>,
    pub final_gamma: Tensor<S>,
    pub final_beta: Tensor<S>,
    pub head_w: Tensor<S>,
    pub head_b: Tensor<S>,
}

/// Builds the fused model: each member contributes the attention blocks of its
/// surviving heads, MLPs are averaged across members, and everything else is
/// taken from `base`.
pub fn fuse<S: Scalar>(base: &Model<S>, members: &[Member<S>]) -> Result<HydraModel<S>> {
    if members.is_empty() {
        return Err(Error::contract("fusion", "need at least one member"));
    }
    let cfg = base.config;
    for (m, member) in members.iter().enumerate() {
        if member.model.config != cfg {
            return Err(Error::contract(
                "fusion",
                format!("member {m} config differs from the base model"),
            ));
        }
        member.mask.validate(&cfg)?;
    }
    let d_k = cfg.head_dim();
    let layers = (0..cfg.layers)
        .map(|l| {
            let attn = members
                .iter()
                .map(|m| {
                    MemberAttention::slice(&m.model.weights.layers[l], m.mask.survivors(l), d_k)
                })
                .collect::<Result<Vec<_>>>()?;
            let mlps: Vec<&LayerWeights<Tensor<S>>> =
                members.iter().map(|m| &m.model.weights.layers[l]).collect();
            let shared = &base.weights.layers[l];
            Ok(HydraLayer {
                members: attn,
                mlp: merge_mlp(&mlps)?,
                ln1_gamma: shared.ln1_gamma.clone(),
                ln1_beta: shared.ln1_beta.clone(),
                ln2_gamma: shared.ln2_gamma.clone(),
                ln2_beta: shared.ln2_beta.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let w = &base.weights;
    Ok(HydraModel {
        config: cfg,
        masks: members.iter().map(|m| m.mask.clone()).collect(),
        tok_emb: w.tok_emb.clone(),
        pos_emb: w.pos_emb.clone(),
        cls: w.cls.clone(),
        layers,
        final_gamma: w.final_gamma.clone(),
        final_beta: w.final_beta.clone(),
        head_w: w.head_w.clone(),
        head_b: w.head_b.clone(),
    })
}

/// Member-major `MT × d` stack to `T × Md`: member `m`'s rows become column
/// block `m`.
pub fn stack_to_wide<S: Scalar>(x: &Tensor<S>, members: usize) -> Result<Tensor<S>> {
    if members == 0 || x.rows() % members != 0 {
        return Err(Error::contract(
            "fusion",
            format!(
                "{} rows cannot be split into {members} member blocks",
                x.rows()
            ),
        ));
    }
    if members == 1 {
        return Ok(x.clone());
    }
    let t = x.rows() / members;
    let blocks = (0..members)
        .map(|m| x.slice_rows(m * t, t))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_cols(&blocks.iter().collect::<Vec<_>>())
}

/// Inverse of [`stack_to_wide`].
pub fn wide_to_stack<S: Scalar>(x: &Tensor<S>, members: usize) -> Result<Tensor<S>> {
    if members == 0 || x.cols() % members != 0 {
        return Err(Error::contract(
            "fusion",
            format!(
                "{} columns cannot be split into {members} member blocks",
                x.cols()
            ),
        ));
    }
    if members == 1 {
        return Ok(x.clone());
    }
    let d = x.cols() / members;
    let blocks = (0..members)
        .map(|m| x.slice_cols(m * d, d))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&blocks.iter().collect::<Vec<_>>())
}

/// Fused attention on a `T × Md` input: member `m`'s column block passes
/// through its own projections only (a block-diagonal grouped projection),
/// and its output lands in the same column block.
pub fn fused_mha<S: Scalar>(
    x_wide: &Tensor<S>,
    layer: &HydraLayer<S>,
    cfg: &TransformerConfig,
) -> Result<Tensor<S>> {
    let m_count = layer.members.len();
    let d = cfg.hidden;
    if x_wide.cols() != m_count * d {
        return Err(Error::shape(
            "fused_mha",
            format!(
                "input {:?} for {m_count} members of width {d}",
                x_wide.shape()
            ),
        ));
    }
    let d_k = cfg.head_dim();
    let mut ops = Eager;
    let outputs = layer
        .members
        .iter()
        .enumerate()
        .map(|(m, a)| {
            let x_m = if m_count == 1 {
                Cow::Borrowed(x_wide)
            } else {
                Cow::Owned(x_wide.slice_cols(m * d, d)?)
            };
            let b = cow;
            let out = attention(
                &mut ops,
                &x_m,
                &b(&a.w_q),
                &b(&a.b_q),
                &b(&a.w_k),
                &b(&a.b_k),
                &b(&a.w_v),
                &b(&a.b_v),
                &b(&a.w_o),
                &b(&a.b_o),
                a.heads.len(),
                d_k,
            )?;
            Ok(out.into_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    if m_count == 1 {
        return Ok(outputs.into_iter().next().expect("one member"));
    }
    Tensor::concat_cols(&outputs.iter().collect::<Vec<_>>())
}

/// One fused layer on a member-major `MT × d` stack:
/// LN, reshape to `T × Md`, fused attention, reshape back, residual,
/// LN, merged MLP, residual.
pub fn fused_forward_layer<S: Scalar>(
    x: &Tensor<S>,
    layer: &HydraLayer<S>,
    cfg: &TransformerConfig,
) -> Result<Tensor<S>> {
    let m_count = layer.members.len();
    if x.cols() != cfg.hidden || x.rows() % m_count != 0 {
        return Err(Error::contract(
            "fusion",
            format!(
                "input {:?} is not a member-major stack of {m_count} blocks of width {}",
                x.shape(),
                cfg.hidden
            ),
        ));
    }
    let eps = S::lit(cfg.ln_eps);
    let x_hat = x.layernorm(&layer.ln1_gamma, &layer.ln1_beta, eps)?;
    let att = fused_mha(&stack_to_wide(&x_hat, m_count)?, layer, cfg)?;
    let y = x.add(&wide_to_stack(&att, m_count)?)?;
    let y_hat = y.layernorm(&layer.ln2_gamma, &layer.ln2_beta, eps)?;
    let mut ops = Eager;
    let v = cow;
    let out = mlp(
        &mut ops,
        &Cow::Borrowed(&y_hat),
        &v(&layer.mlp.w1),
        &v(&layer.mlp.b1),
        &v(&layer.mlp.w2),
        &v(&layer.mlp.b2),
    )?;
    y.add(&out)
}

impl<S: Scalar> HydraModel<S> {
    pub fn member_count(&self) -> usize {
        self.masks.len()
    }

    /// Logits of every member stream for one token sequence.
    pub fn member_logits(&self, tokens: &[usize]) -> Result<Vec<Vec<S>>> {
        self.member_logits_with(tokens, None)
    }

    /// As [`Self::member_logits`], with optional noise added to the embeddings.
    pub fn member_logits_with(
        &self,
        tokens: &[usize],
        jitter: Option<&Tensor<S>>,
    ) -> Result<Vec<Vec<S>>> {
        let cfg = &self.config;
        check_tokens(cfg, tokens)?;
        let m_count = self.member_count();
        let mut ops = Eager;
        let b = cow;
        let x = embed(
            &mut ops,
            &b(&self.tok_emb),
            &b(&self.pos_emb),
            &b(&self.cls),
            tokens,
            jitter,
        )?
        .into_owned();
        let rows = x.rows();
        let mut h = if m_count == 1 {
            x
        } else {
            Tensor::concat_rows(&vec![&x; m_count])?
        };
        for layer in &self.layers {
            h = fused_forward_layer(&h, layer, cfg)?;
        }
        let eps = S::lit(cfg.ln_eps);
        (0..m_count)
            .map(|m| {
                let logits = classify(
                    &mut ops,
                    &b(&self.final_gamma),
                    &b(&self.final_beta),
                    &b(&self.head_w),
                    &b(&self.head_b),
                    &b(&h),
                    m * rows,
                    eps,
                )?;
                Ok(logits.into_owned().into_data())
            })
            .collect()
    }

    /// Mean of the member streams' softmax probabilities.
    pub fn probs(&self, tokens: &[usize]) -> Result<Vec<S>> {
        self.probs_with(tokens, None)
    }

    pub fn probs_with(&self, tokens: &[usize], jitter: Option<&Tensor<S>>) -> Result<Vec<S>> {
        let m_count = self.member_count();
        let mut mean = vec![S::zero(); self.config.classes];
        for logits in self.member_logits_with(tokens, jitter)? {
            let p = Tensor::vector(logits).softmax_rows();
            for (acc, &x) in mean.iter_mut().zip(p.data()) {
                *acc += x;
            }
        }
        let m = S::lit(m_count as f64);
        Ok(mean.into_iter().map(|x| x / m).collect())
    }

    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<Vec<S>>> {
        self.predict_with(samples, None)
    }

    /// Probabilities for every sample, with per-sample embedding noise drawn
    /// from `jitter` by sample index.
    pub fn predict_with(&self, samples: &[Sample], jitter: Option<Jitter>) -> Result<Vec<Vec<S>>> {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let noise = jitter.map(|j| j.for_sample(i, s.tokens.len() + 1, self.config.hidden));
                self.probs_with(&s.tokens, noise.as_ref())
            })
            .collect()
    }

    /// Stand-alone model of member `m`: its surviving attention blocks put
    /// back in place (dead heads zero), the merged MLP, and the shared parts.
    pub fn unfuse(&self, m: usize) -> Result<Member<S>> {
        let cfg = self.config;
        let mask = self
            .masks
            .get(m)
            .ok_or_else(|| Error::contract("fusion", format!("member {m} out of range")))?
            .clone();
        let (d, d_k) = (cfg.hidden, cfg.head_dim());
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let a = &layer.members[m];
                let cols = head_columns(&a.heads, d_k);
                let spread_cols = |t: &Tensor<S>| {
                    let mut out = Tensor::zeros(&if t.rank() == 1 { vec![d] } else { vec![d, d] });
                    for r in 0..t.rows() {
                        for (j, &c) in cols.iter().enumerate() {
                            out.data_mut()[r * d + c] = t.row(r)[j];
                        }
                    }
                    out
                };
                let mut w_o = Tensor::zeros(&[d, d]);
                for (j, &r) in cols.iter().enumerate() {
                    w_o.row_mut(r).copy_from_slice(a.w_o.row(j));
                }
                LayerWeights {
                    w_q: spread_cols(&a.w_q),
                    w_k: spread_cols(&a.w_k),
                    w_v: spread_cols(&a.w_v),
                    w_o,
                    b_q: spread_cols(&a.b_q),
                    b_k: spread_cols(&a.b_k),
                    b_v: spread_cols(&a.b_v),
                    b_o: a.b_o.clone(),
                    w1: layer.mlp.w1.clone(),
                    b1: layer.mlp.b1.clone(),
                    w2: layer.mlp.w2.clone(),
                    b2: layer.mlp.b2.clone(),
                    ln1_gamma: layer.ln1_gamma.clone(),
                    ln1_beta: layer.ln1_beta.clone(),
                    ln2_gamma: layer.ln2_gamma.clone(),
                    ln2_beta: layer.ln2_beta.clone(),
                }
            })
            .collect();
        let weights = Weights {
            tok_emb: self.tok_emb.clone(),
            pos_emb: self.pos_emb.clone(),
            cls: self.cls.clone(),
            layers,
            final_gamma: self.final_gamma.clone(),
            final_beta: self.final_beta.clone(),
            head_w: self.head_w.clone(),
            head_b: self.head_b.clone(),
        };
        Ok(Member {
            mask,
            model: Model::from_weights(cfg, weights)?,
        })
    }

    pub fn param_count(&self) -> usize {
        let shared = self.tok_emb.len()
            + self.pos_emb.len()
            + self.cls.len()
            + self.final_gamma.len()
            + self.final_beta.len()
            + self.head_w.len()
            + self.head_b.len();
        let layers: usize = self
            .layers
            .iter()
            .map(|l| {
                let attn: usize = l
                    .members
                    .iter()
                    .map(|a| a.named().iter().map(|(_, t)| t.len()).sum::<usize>())
                    .sum();
                attn + l.mlp.w1.len()
                    + l.mlp.b1.len()
                    + l.mlp.w2.len()
                    + l.mlp.b2.len()
                    + l.ln1_gamma.len()
                    + l.ln1_beta.len()
                    + l.ln2_gamma.len()
                    + l.ln2_beta.len()
            })
            .sum();
        shared + layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(model: &Model<f64>, mask: &str) -> Member<f64> {
        Member {
            mask: mask.parse().unwrap(),
            model: model.clone(),
        }
    }

    #[test]
    fn single_full_member_is_the_base_model_bitwise() {
        let cfg = TransformerConfig::default();
        let base = Model::<f64>::init(cfg, 4).unwrap();
        let full = HeadMask::for_config(&cfg);
        let hm = fuse(
            &base,
            &[Member {
                mask: full.clone(),
                model: base.clone(),
            }],
        )
        .unwrap();
        let tokens: Vec<usize> = (0..cfg.seq_len).map(|i| (i * 7) % cfg.vocab).collect();
        assert_eq!(
            hm.probs(&tokens).unwrap(),
            base.probs(&tokens, &full).unwrap()
        );
    }

    #[test]
    fn reshape_roundtrip() {
        let x = Tensor::<f64>::from_fn(&[6, 4], |i| i as f64);
        let wide = stack_to_wide(&x, 3).unwrap();
        assert_eq!(wide.shape(), &[2, 12]);
        assert_eq!(wide.row(1)[4..8], *x.row(3));
        assert_eq!(wide_to_stack(&wide, 3).unwrap(), x);
        assert!(stack_to_wide(&x, 4).is_err());
    }

    #[test]
    fn identical_members_give_identical_streams() {
        let cfg = TransformerConfig::default();
        let base = Model::<f64>::init(cfg, 2).unwrap();
        let m = member(&base, "11011111|11111010");
        let hm = fuse(&base, &[m.clone(), m.clone(), m]).unwrap();
        let tokens = vec![1, 5, 9, 3];
        let streams = hm.member_logits(&tokens).unwrap();
        assert_eq!(streams[0], streams[1]);
        assert_eq!(streams[1], streams[2]);
    }

    #[test]
    fn zero_input_yields_member_output_biases() {
        let cfg = TransformerConfig::default();
        let mut base = Model::<f64>::init(cfg, 2).unwrap();
        for (i, x) in base.weights.layers[0].b_o.data_mut().iter_mut().enumerate() {
            *x = i as f64;
        }
        let hm = fuse(
            &base,
            &[
                member(&base, "11110000|11111111"),
                member(&base, "00001111|11111111"),
            ],
        )
        .unwrap();
        let x = Tensor::zeros(&[3, 2 * cfg.hidden]);
        let out = fused_mha(&x, &hm.layers[0], &cfg).unwrap();
        for r in 0..3 {
            for m in 0..2 {
                assert_eq!(
                    &out.row(r)[m * cfg.hidden..(m + 1) * cfg.hidden],
                    base.weights.layers[0].b_o.data()
                );
            }
        }
    }

    #[test]
    fn unfuse_then_fuse_is_bitwise_idempotent() {
        let cfg = TransformerConfig::default();
        let base = Model::<f64>::init(cfg, 6).unwrap();
        let mut other = Model::<f64>::init(cfg, 7).unwrap();
        other.weights.tok_emb = base.weights.tok_emb.clone();
        let hm = fuse(
            &base,
            &[
                member(&base, "10111111|11111101"),
                member(&other, "11111111|01111111"),
            ],
        )
        .unwrap();
        let parts: Vec<Member<f64>> = (0..2).map(|m| hm.unfuse(m).unwrap()).collect();
        let again = fuse(&parts[0].model, &parts).unwrap();
        assert_eq!(again, hm);
    }
}
