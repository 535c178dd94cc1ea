//! Reference implementations shared by the integration and acceptance tests.
//! Nothing here calls library numerics beyond reading weights.
#![allow(dead_code)]

use hydra_core::data::Sample;
use hydra_core::pruning::{eval_score, tie_ranks, Member, ScoreKind};
use hydra_core::{HeadMask, Model, Tensor, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    let cols = t.shape()[t.rank() - 1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn layernorm_row(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    (0..x.len())
        .map(|i| (x[i] - mean) * inv * g[i] + b[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
}

/// Straight-line pre-norm layer. Dead heads are skipped entirely.
#[allow(clippy::too_many_arguments)]
pub fn reference_layer(
    x: &Mat,
    w: &hydra_core::LayerWeights<Tensor<f64>>,
    alive: &[bool],
    d_k: usize,
    eps: f64,
) -> Mat {
    let n = x.len();
    let d = x[0].len();
    let g1 = w.ln1_gamma.data();
    let be1 = w.ln1_beta.data();
    let xh: Mat = x.iter().map(|r| layernorm_row(r, g1, be1, eps)).collect();
    let (wq, wk, wv, wo) = (
        to_mat(&w.w_q),
        to_mat(&w.w_k),
        to_mat(&w.w_v),
        to_mat(&w.w_o),
    );
    let proj = |m: &Mat, b: &[f64]| -> Mat {
        let mut p = matmul(&xh, m);
        for row in &mut p {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        p
    };
    let q = proj(&wq, w.b_q.data());
    let k = proj(&wk, w.b_k.data());
    let v = proj(&wv, w.b_v.data());
    let mut attn = vec![w.b_o.data().to_vec(); n];
    for (h, &live) in alive.iter().enumerate() {
        if !live {
            continue;
        }
        let cols = h * d_k..(h + 1) * d_k;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d_k as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            let z: Vec<f64> = cols
                .clone()
                .map(|c| (0..n).map(|j| p[j] * v[j][c]).sum())
                .collect();
            for out in 0..d {
                attn[i][out] += (0..d_k).map(|t| z[t] * wo[h * d_k + t][out]).sum::<f64>();
            }
        }
    }
    let y: Mat = (0..n)
        .map(|i| (0..d).map(|c| x[i][c] + attn[i][c]).collect())
        .collect();
    let yh: Mat = y
        .iter()
        .map(|r| layernorm_row(r, w.ln2_gamma.data(), w.ln2_beta.data(), eps))
        .collect();
    let mut hidden = matmul(&yh, &to_mat(&w.w1));
    for row in &mut hidden {
        for (v, b) in row.iter_mut().zip(w.b1.data()) {
            *v = gelu(*v + b);
        }
    }
    let out = matmul(&hidden, &to_mat(&w.w2));
    (0..n)
        .map(|i| {
            (0..d)
                .map(|c| y[i][c] + out[i][c] + w.b2.data()[c])
                .collect()
        })
        .collect()
}

pub fn reference_logits(m: &Model<f64>, tokens: &[usize], mask: &HeadMask) -> Vec<f64> {
    let cfg = &m.config;
    let w = &m.weights;
    let tok = to_mat(&w.tok_emb);
    let pos = to_mat(&w.pos_emb);
    let mut x: Mat = vec![w
        .cls
        .data()
        .iter()
        .zip(&pos[0])
        .map(|(a, b)| a + b)
        .collect()];
    for (t, &id) in tokens.iter().enumerate() {
        x.push(
            tok[id]
                .iter()
                .zip(&pos[t + 1])
                .map(|(a, b)| a + b)
                .collect(),
        );
    }
    for (l, layer) in w.layers.iter().enumerate() {
        x = reference_layer(&x, layer, mask.row(l), cfg.head_dim(), cfg.ln_eps);
    }
    let top = layernorm_row(&x[0], w.final_gamma.data(), w.final_beta.data(), cfg.ln_eps);
    let hw = to_mat(&w.head_w);
    (0..cfg.classes)
        .map(|c| w.head_b.data()[c] + (0..cfg.hidden).map(|i| top[i] * hw[i][c]).sum::<f64>())
        .collect()
}

pub fn reference_probs(m: &Model<f64>, tokens: &[usize], mask: &HeadMask) -> Vec<f64> {
    softmax(&reference_logits(m, tokens, mask))
}

fn mean_slot(members: &[Member<f64>], layer: usize, slot: usize) -> Tensor<f64> {
    let first = members[0].model.weights.layers[layer].fields()[slot];
    let mut data = vec![0.0; first.len()];
    for m in members {
        for (acc, x) in data
            .iter_mut()
            .zip(m.model.weights.layers[layer].fields()[slot].data())
        {
            *acc += x / members.len() as f64;
        }
    }
    Tensor::new(first.shape().to_vec(), data).unwrap()
}

/// Mean softmax of standalone members, each carrying its own attention and
/// the entrywise mean of all members' MLPs.
pub fn member_oracle_probs(
    base: &Model<f64>,
    members: &[Member<f64>],
    tokens: &[usize],
) -> Vec<f64> {
    let m_count = members.len() as f64;
    let mut mean = vec![0.0; base.config.classes];
    for member in members {
        let mut standalone = base.clone();
        for (l, layer) in standalone.weights.layers.iter_mut().enumerate() {
            let own = &member.model.weights.layers[l];
            layer.w_q = own.w_q.clone();
            layer.w_k = own.w_k.clone();
            layer.w_v = own.w_v.clone();
            layer.w_o = own.w_o.clone();
            layer.b_q = own.b_q.clone();
            layer.b_k = own.b_k.clone();
            layer.b_v = own.b_v.clone();
            layer.b_o = own.b_o.clone();
            let mlp = [8, 9, 10, 11].map(|slot| mean_slot(members, l, slot));
            let [w1, b1, w2, b2] = mlp;
            layer.w1 = w1;
            layer.b1 = b1;
            layer.w2 = w2;
            layer.b2 = b2;
        }
        for (acc, p) in mean
            .iter_mut()
            .zip(reference_probs(&standalone, tokens, &member.mask))
        {
            *acc += p / m_count;
        }
    }
    mean
}

pub fn random_config(r: &mut ChaCha8Rng) -> TransformerConfig {
    let heads = [1, 2, 3, 4][r.random_range(0..4)];
    TransformerConfig {
        layers: r.random_range(1..=3),
        hidden: heads * r.random_range(1..=3),
        heads,
        ff: r.random_range(1..=8),
        seq_len: r.random_range(1..=5),
        vocab: r.random_range(2..=7),
        classes: r.random_range(2..=4),
        ln_eps: 1e-5,
    }
}

pub fn random_mask(cfg: &TransformerConfig, r: &mut ChaCha8Rng) -> HeadMask {
    let mut mask = HeadMask::for_config(cfg);
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            if r.random_bool(0.5) && mask.can_remove(l, h) {
                mask.remove(l, h).unwrap();
            }
        }
    }
    mask
}

pub fn random_tokens(cfg: &TransformerConfig, r: &mut ChaCha8Rng) -> Vec<usize> {
    (0..cfg.seq_len)
        .map(|_| r.random_range(0..cfg.vocab))
        .collect()
}

/// Model with every bias and layernorm parameter randomized too.
pub fn random_model(cfg: TransformerConfig, r: &mut ChaCha8Rng) -> Model<f64> {
    let mut m = Model::init(cfg, r.random()).unwrap();
    for t in m.weights.slots_mut() {
        for x in t.data_mut() {
            *x += 0.3 * (r.random::<f64>() - 0.5);
        }
    }
    m
}

/// Cross-entropy of one sample computed by the reference forward.
pub fn reference_loss(m: &Model<f64>, tokens: &[usize], label: usize, mask: &HeadMask) -> f64 {
    -reference_probs(m, tokens, mask)[label].ln()
}

/// Central difference of `f` in every entry of parameter slot `slot`.
pub fn fd_slot(m: &Model<f64>, slot: usize, h: f64, f: &dyn Fn(&Model<f64>) -> f64) -> Vec<f64> {
    let len = m.weights.named()[slot].1.len();
    (0..len)
        .map(|i| {
            let mut plus = m.clone();
            plus.weights.slots_mut()[slot].data_mut()[i] += h;
            let mut minus = m.clone();
            minus.weights.slots_mut()[slot].data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

pub fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut credit = 0.0;
    for a in id {
        for b in ood {
            if a > b {
                credit += 1.0;
            } else if a == b {
                credit += 0.5;
            }
        }
    }
    credit / (id.len() * ood.len()) as f64
}

/// Scans every candidate threshold; keeps the largest one whose TPR reaches
/// 0.95, then reports the OOD fraction at or above it.
pub fn scan_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = id.iter().chain(ood).cloned().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = f64::NEG_INFINITY;
    for &t in &candidates {
        let tpr = id.iter().filter(|&&x| x >= t).count() as f64 / id.len() as f64;
        if tpr >= 0.95 {
            best = best.max(t);
        }
    }
    ood.iter().filter(|&&x| x >= best).count() as f64 / ood.len() as f64
}

/// Per-step exhaustive search over single-head removals, realized by zeroing
/// output-projection rows, with the library's published tie ranks.
pub fn exhaustive_greedy(
    model: &Model<f64>,
    budget: usize,
    kind: ScoreKind,
    id: &[Sample],
    ood: &[Sample],
    seed: u64,
) -> Vec<(usize, usize)> {
    let cfg = model.config;
    let ranks = tie_ranks(cfg.layers, cfg.heads, seed);
    let full = HeadMask::for_config(&cfg);
    let width = cfg.head_dim() * cfg.hidden;
    let mut removed: Vec<(usize, usize)> = Vec::new();
    for _ in 0..budget {
        let mut best: Option<(f64, usize, (usize, usize))> = None;
        for l in 0..cfg.layers {
            let alive = cfg.heads - removed.iter().filter(|r| r.0 == l).count();
            for h in 0..cfg.heads {
                if alive < 2 || removed.contains(&(l, h)) {
                    continue;
                }
                let mut m = model.clone();
                for &(rl, rh) in removed.iter().chain([(l, h)].iter()) {
                    m.weights.layers[rl].w_o.data_mut()[rh * width..(rh + 1) * width].fill(0.0);
                }
                let s = eval_score(&m, &full, kind, id, ood).unwrap();
                let take = match best {
                    None => true,
                    Some((bs, br, _)) => s > bs || (s == bs && ranks[l][h] < br),
                };
                if take {
                    best = Some((s, ranks[l][h], (l, h)));
                }
            }
        }
        removed.push(best.unwrap().2);
    }
    removed
}

/// Binned calibration gap over `(k/B, (k+1)/B]` bins, computed directly.
pub fn hand_ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] == 0.0)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / k;
        let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
        total += k / n * (acc - avg).abs();
    }
    total
}

/// Attention output of every surviving head at the classification row of
/// `layer`, before the output projection.
pub fn reference_cls_heads(
    m: &Model<f64>,
    tokens: &[usize],
    mask: &HeadMask,
    layer: usize,
) -> Vec<(usize, Vec<f64>)> {
    let cfg = &m.config;
    let w = &m.weights;
    let tok = to_mat(&w.tok_emb);
    let pos = to_mat(&w.pos_emb);
    let mut x: Mat = vec![w
        .cls
        .data()
        .iter()
        .zip(&pos[0])
        .map(|(a, b)| a + b)
        .collect()];
    for (t, &id) in tokens.iter().enumerate() {
        x.push(
            tok[id]
                .iter()
                .zip(&pos[t + 1])
                .map(|(a, b)| a + b)
                .collect(),
        );
    }
    for l in 0..layer {
        x = reference_layer(&x, &w.layers[l], mask.row(l), cfg.head_dim(), cfg.ln_eps);
    }
    let lw = &w.layers[layer];
    let xh: Mat = x
        .iter()
        .map(|r| layernorm_row(r, lw.ln1_gamma.data(), lw.ln1_beta.data(), cfg.ln_eps))
        .collect();
    let proj = |t: &Tensor<f64>, b: &Tensor<f64>| -> Mat {
        let mut p = matmul(&xh, &to_mat(t));
        for row in &mut p {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        p
    };
    let (q, k, v) = (
        proj(&lw.w_q, &lw.b_q),
        proj(&lw.w_k, &lw.b_k),
        proj(&lw.w_v, &lw.b_v),
    );
    let d_k = cfg.head_dim();
    mask.survivors(layer)
        .into_iter()
        .map(|h| {
            let cols = h * d_k..(h + 1) * d_k;
            let scores: Vec<f64> = (0..x.len())
                .map(|j| cols.clone().map(|c| q[0][c] * k[j][c]).sum::<f64>() / (d_k as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            (
                h,
                cols.map(|c| (0..x.len()).map(|j| p[j] * v[j][c]).sum())
                    .collect(),
            )
        })
        .collect()
}
