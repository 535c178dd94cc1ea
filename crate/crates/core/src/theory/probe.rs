use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::{HeadMask, Jitter, Model, Weights};

/// Gradient statistics of a trained model on clean and noisy data, for a
/// given pruning perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    /// `gⁿᵀδθ`: noisy-set mean gradient against the perturbation.
    pub alignment: f64,
    /// Mean over parameters of the empirical Fisher diagonal, clean set.
    pub fisher_clean: f64,
    /// Same on the noisy set.
    pub fisher_noisy: f64,
    /// `fisher_noisy − fisher_clean`.
    pub fisher_diff: f64,
    /// Standard error of `fisher_diff` across samples.
    pub fisher_diff_sigma: f64,
    /// Norm of the clean-set mean gradient.
    pub residual_grad_norm: f64,
    /// `residual_grad_norm` over the mean per-sample gradient norm. Near 1 the
    /// per-sample gradients agree, so the model is far from a stationary point.
    pub gradient_coherence: f64,
    pub warnings: Vec<String>,
}

impl ProbeReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "alignment={}\nfisher_clean={}\nfisher_noisy={}\nfisher_diff={}\nfisher_diff_sigma={}\nresidual_grad_norm={}\ngradient_coherence={}\n",
            self.alignment,
            self.fisher_clean,
            self.fisher_noisy,
            self.fisher_diff,
            self.fisher_diff_sigma,
            self.residual_grad_norm,
            self.gradient_coherence
        );
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out
    }
}

/// Coherence above which the probe warns that the clean gradient is not
/// close to zero.
pub const COHERENCE_WARNING: f64 = 0.5;

/// Parameter change that realizes `mask` on `model` by zeroing the
/// output-projection rows of every pruned head.
pub fn pruning_delta<S: Scalar>(model: &Model<S>, mask: &HeadMask) -> Result<Weights<Tensor<S>>> {
    mask.validate(&model.config)?;
    let mut delta = model.weights.zeros_like();
    let width = model.config.head_dim() * model.config.hidden;
    for (l, h) in mask.removed() {
        let range = h * width..(h + 1) * width;
        let src = &model.weights.layers[l].w_o.data()[range.clone()];
        let dst = &mut delta.layers[l].w_o.data_mut()[range];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = -s;
        }
    }
    Ok(delta)
}

struct GradStats {
    n: usize,
    mean_grad: Vec<f64>,
    /// Per-sample mean of squared gradient entries.
    sq_means: Vec<f64>,
    norms: Vec<f64>,
}

fn flatten<S: Scalar>(w: &Weights<Tensor<S>>) -> impl Iterator<Item = f64> + '_ {
    w.named()
        .into_iter()
        .flat_map(|(_, t)| t.data().iter().map(|x| x.to_f64_lossy()))
}

fn grad_stats<S: Scalar>(
    model: &Model<S>,
    data: &[Sample],
    jitter: Option<Jitter>,
) -> Result<GradStats> {
    if data.is_empty() {
        return Err(Error::contract(
            "theory-checks",
            "probe needs at least one sample per set",
        ));
    }
    let full = HeadMask::for_config(&model.config);
    let p = model.param_count();
    let mut stats = GradStats {
        n: data.len(),
        mean_grad: vec![0.0; p],
        sq_means: Vec::with_capacity(data.len()),
        norms: Vec::with_capacity(data.len()),
    };
    let chunk = 64;
    for start in (0..data.len()).step_by(chunk) {
        let end = (start + chunk).min(data.len());
        let grads: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let s = &data[i];
                let label = s
                    .label
                    .ok_or_else(|| Error::contract("theory-checks", "probe sample has no label"))?;
                let noise =
                    jitter.map(|j| j.for_sample(i, s.tokens.len() + 1, model.config.hidden));
                let (_, g) = model.loss_grad(&s.tokens, label, &full, noise.as_ref())?;
                Ok(flatten(&g).collect())
            })
            .collect::<Result<_>>()?;
        for g in grads {
            let sq: f64 = g.iter().map(|x| x * x).sum();
            stats.sq_means.push(sq / p as f64);
            stats.norms.push(sq.sqrt());
            for (m, x) in stats.mean_grad.iter_mut().zip(&g) {
                *m += x;
            }
        }
    }
    for m in &mut stats.mean_grad {
        *m /= stats.n as f64;
    }
    Ok(stats)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Measures the quantities the loss-gap argument relies on: alignment of the
/// noisy gradient with `delta`, the difference of empirical Fisher diagonals
/// as a curvature proxy, and how far the clean gradient is from zero.
pub fn assumption_probe<S: Scalar>(
    model: &Model<S>,
    clean: &[Sample],
    noisy: &[Sample],
    noisy_jitter: Option<Jitter>,
    delta: &Weights<Tensor<S>>,
) -> Result<ProbeReport> {
    let clean_stats = grad_stats(model, clean, None)?;
    let noisy_stats = grad_stats(model, noisy, noisy_jitter)?;
    let d: Vec<f64> = flatten(delta).collect();
    if d.len() != noisy_stats.mean_grad.len() {
        return Err(Error::shape(
            "assumption_probe",
            format!(
                "delta has {} entries, model {}",
                d.len(),
                noisy_stats.mean_grad.len()
            ),
        ));
    }
    let alignment: f64 = noisy_stats
        .mean_grad
        .iter()
        .zip(&d)
        .map(|(g, x)| g * x)
        .sum();
    let (fc, vc) = mean_var(&clean_stats.sq_means);
    let (fn_, vn) = mean_var(&noisy_stats.sq_means);
    let residual: f64 = clean_stats
        .mean_grad
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let mean_norm = clean_stats.norms.iter().sum::<f64>() / clean_stats.n as f64;
    let coherence = if mean_norm > 0.0 {
        residual / mean_norm
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if coherence > COHERENCE_WARNING {
        warnings.push(format!(
            "clean gradient is far from zero (coherence {coherence:.3}); model looks untrained"
        ));
    }
    if !(alignment.is_finite() && fc.is_finite() && fn_.is_finite()) {
        return Err(Error::contract(
            "theory-checks",
            "non-finite gradient statistics",
        ));
    }
    Ok(ProbeReport {
        alignment,
        fisher_clean: fc,
        fisher_noisy: fn_,
        fisher_diff: fn_ - fc,
        fisher_diff_sigma: (vc / clean_stats.n as f64 + vn / noisy_stats.n as f64).sqrt(),
        residual_grad_norm: residual,
        gradient_coherence: coherence,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::TransformerConfig;

    fn tiny() -> Model<f64> {
        let cfg = TransformerConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff: 8,
            seq_len: 4,
            vocab: 6,
            classes: 2,
            ln_eps: 1e-5,
        };
        Model::init(cfg, 3).unwrap()
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                tokens: vec![i % 6, (i + 1) % 6, 2, 3],
                label: Some(i % 2),
            })
            .collect()
    }

    #[test]
    fn pruning_delta_zeroes_the_head_when_added() {
        let m = tiny();
        let mask = HeadMask::without(&m.config, [(0, 1)]).unwrap();
        let delta = pruning_delta(&m, &mask).unwrap();
        let mut w = m.weights.clone();
        w.axpy(1.0, &delta).unwrap();
        let width = m.config.head_dim() * m.config.hidden;
        assert!(w.layers[0].w_o.data()[width..].iter().all(|&x| x == 0.0));
        assert_eq!(
            w.layers[0].w_o.data()[..width],
            m.weights.layers[0].w_o.data()[..width]
        );
    }

    #[test]
    fn zero_delta_has_zero_alignment() {
        let m = tiny();
        let delta = m.weights.zeros_like();
        let r = assumption_probe(&m, &samples(6), &samples(5), None, &delta).unwrap();
        assert_eq!(r.alignment, 0.0);
        assert!(r.fisher_clean > 0.0 && r.residual_grad_norm > 0.0);
        assert!(r.gradient_coherence <= 1.0 + 1e-12);
    }

    #[test]
    fn single_sample_is_fully_coherent() {
        let m = tiny();
        let delta = m.weights.zeros_like();
        let r = assumption_probe(&m, &samples(1), &samples(1), None, &delta).unwrap();
        assert!((r.gradient_coherence - 1.0).abs() < 1e-12);
        assert_eq!(r.warnings.len(), 1);
    }
}
