//! Self-checks run by `hydra verify`: each suite compares a library path
//! against an independent reference computation on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate, Sample, Split, TaskSpec};
use crate::error::Result;
use crate::fusion::{cost_report, fuse};
use crate::io::{decode, encode_hydra, encode_model, Artifact};
use crate::metrics::{auroc, fpr95};
use crate::numerics::Tensor;
use crate::pruning::{
    eval_score, extract_circuit, tie_ranks, CircuitOptions, Member, PruneBudget, ScoreKind,
};
use crate::theory::{proposition1_sweep, Regime};
use crate::transformer::{HeadMask, Model, Realization, TransformerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub const SUITES: [&str; 8] = [
    "fusion",
    "ablation",
    "gradients",
    "greedy",
    "metrics",
    "serialization",
    "theory",
    "cost",
];

/// Runs the named suites (all when `only` is empty) with base seed `seed`.
pub fn run_suites(only: &[String], seed: u64) -> Result<Vec<SuiteOutcome>> {
    let mut out = Vec::new();
    for name in SUITES {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        out.push(match name {
            "fusion" => fusion_suite(seed)?,
            "ablation" => ablation_suite(seed)?,
            "gradients" => gradient_suite(seed)?,
            "greedy" => greedy_suite(seed)?,
            "metrics" => metrics_suite(seed)?,
            "serialization" => serialization_suite(seed)?,
            "theory" => theory_suite(seed)?,
            _ => cost_suite()?,
        });
    }
    Ok(out)
}

fn random_config(rng: &mut ChaCha8Rng) -> TransformerConfig {
    let heads = [1, 2, 4][rng.random_range(0..3)];
    TransformerConfig {
        layers: rng.random_range(1..=2),
        hidden: heads * rng.random_range(1..=3),
        heads,
        ff: rng.random_range(2..=6),
        seq_len: rng.random_range(1..=4),
        vocab: rng.random_range(2..=6),
        classes: rng.random_range(2..=4),
        ln_eps: 1e-5,
    }
}

fn random_mask(cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> HeadMask {
    let mut mask = HeadMask::for_config(cfg);
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            if rng.random_bool(0.4) && mask.can_remove(l, h) {
                mask.remove(l, h).expect("removable");
            }
        }
    }
    mask
}

fn random_tokens(cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..cfg.seq_len)
        .map(|_| rng.random_range(0..cfg.vocab))
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Fused prediction against the mean softmax of standalone members that
/// carry the averaged MLP.
fn fusion_suite(seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let cases = 40;
    for case in 0..cases {
        let cfg = random_config(&mut rng);
        let base = Model::<f64>::init(cfg, seed.wrapping_add(case))?;
        let m_count = 1 + case as usize % 4;
        let members: Vec<Member<f64>> = (0..m_count)
            .map(|_| {
                let mut model = base.clone();
                for layer in &mut model.weights.layers {
                    for t in [&mut layer.w1, &mut layer.b1, &mut layer.w2, &mut layer.b2] {
                        for x in t.data_mut() {
                            *x += 0.1 * (rng.random::<f64>() - 0.5);
                        }
                    }
                }
                Member {
                    mask: random_mask(&cfg, &mut rng),
                    model,
                }
            })
            .collect();
        let hydra = fuse(&base, &members)?;
        let tokens = random_tokens(&cfg, &mut rng);
        let mut expected = vec![0.0; cfg.classes];
        for member in &members {
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
                let pick = |f: fn(&crate::LayerWeights<Tensor<f64>>) -> &Tensor<f64>| {
                    let parts: Vec<&Tensor<f64>> = members
                        .iter()
                        .map(|m| f(&m.model.weights.layers[l]))
                        .collect();
                    Tensor::from_fn(parts[0].shape(), |i| {
                        parts.iter().map(|t| t.data()[i]).sum::<f64>() / m_count as f64
                    })
                };
                layer.w1 = pick(|w| &w.w1);
                layer.b1 = pick(|w| &w.b1);
                layer.w2 = pick(|w| &w.w2);
                layer.b2 = pick(|w| &w.b2);
            }
            let p = softmax(&standalone.logits_with(
                &tokens,
                &member.mask,
                Realization::Ablation,
                None,
            )?);
            for (e, x) in expected.iter_mut().zip(p) {
                *e += x / m_count as f64;
            }
        }
        let got = hydra.probs(&tokens)?;
        for (a, b) in got.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(SuiteOutcome::new(
        "fusion",
        worst <= 1e-10,
        format!("cases={cases} max_abs={worst:.3e} tol=1e-10"),
    ))
}

fn ablation_suite(seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xab1a);
    let mut worst = 0.0f64;
    let cases = 100;
    for case in 0..cases {
        let cfg = random_config(&mut rng);
        let model = Model::<f64>::init(cfg, case)?;
        let mask = random_mask(&cfg, &mut rng);
        let tokens = random_tokens(&cfg, &mut rng);
        let a = model.logits_with(&tokens, &mask, Realization::Ablation, None)?;
        let s = model.logits_with(&tokens, &mask, Realization::Structural, None)?;
        for (x, y) in a.iter().zip(&s) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(SuiteOutcome::new(
        "ablation",
        worst <= 1e-12,
        format!("cases={cases} max_abs={worst:.3e} tol=1e-12"),
    ))
}

/// Backpropagated gradients against central differences on sampled entries.
fn gradient_suite(seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x96ad);
    let cfg = TransformerConfig {
        layers: 2,
        hidden: 4,
        heads: 2,
        ff: 6,
        seq_len: 3,
        vocab: 5,
        classes: 3,
        ln_eps: 1e-5,
    };
    let mut worst = 0.0f64;
    let h = 1e-5;
    for trial in 0..3 {
        let model = Model::<f64>::init(cfg, seed.wrapping_add(trial))?;
        let mask = random_mask(&cfg, &mut rng);
        let tokens = random_tokens(&cfg, &mut rng);
        let label = rng.random_range(0..cfg.classes);
        let (_, grads) = model.loss_grad(&tokens, label, &mask, None)?;
        let loss = |m: &Model<f64>| -> Result<f64> {
            let p = softmax(&m.logits(&tokens, &mask)?);
            Ok(-p[label].ln())
        };
        let analytic: Vec<&Tensor<f64>> = grads.named().into_iter().map(|(_, t)| t).collect();
        let scale = analytic
            .iter()
            .flat_map(|t| t.data())
            .fold(1e-3f64, |m, x| m.max(x.abs()));
        for (slot, g) in analytic.iter().enumerate() {
            for _ in 0..3 {
                let i = rng.random_range(0..g.len());
                let mut plus = model.clone();
                plus.weights.slots_mut()[slot].data_mut()[i] += h;
                let mut minus = model.clone();
                minus.weights.slots_mut()[slot].data_mut()[i] -= h;
                let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
                worst = worst.max((fd - g.data()[i]).abs() / scale);
            }
        }
    }
    Ok(SuiteOutcome::new(
        "gradients",
        worst < 1e-4,
        format!("rel_err={worst:.3e} tol=1e-4"),
    ))
}

/// Every greedy removal against an exhaustive search over single removals.
fn greedy_suite(seed: u64) -> Result<SuiteOutcome> {
    let cfg = TransformerConfig {
        layers: 2,
        hidden: 8,
        heads: 4,
        ff: 8,
        seq_len: 6,
        vocab: 24,
        classes: 2,
        ln_eps: 1e-5,
    };
    let spec = TaskSpec {
        classes: 2,
        seq_len: 6,
        topic_tokens: 4,
        background_tokens: 8,
        ood_tokens: 8,
        ..TaskSpec::with_seed(seed)
    };
    let id = generate(&spec, 48, Split::Test)?.samples;
    let ood = generate(&spec, 48, Split::Ood)?.samples;
    let model = Model::<f64>::init(
        TransformerConfig {
            vocab: spec.vocab(),
            ..cfg
        },
        seed,
    )?;
    let budget = 6;
    let mut mismatches = 0;
    for kind in [ScoreKind::Acc, ScoreKind::Ood, ScoreKind::Avg] {
        let ranking = extract_circuit(
            &model,
            &PruneBudget::Global(budget),
            kind,
            &id,
            &ood,
            seed,
            &CircuitOptions::default(),
        )?;
        let expected = exhaustive_greedy(&model, budget, kind, &id, &ood, seed)?;
        if ranking.removals != expected {
            mismatches += 1;
        }
    }
    Ok(SuiteOutcome::new(
        "greedy",
        mismatches == 0,
        format!("kinds=3 budget={budget} mismatched_kinds={mismatches}"),
    ))
}

fn exhaustive_greedy(
    model: &Model<f64>,
    budget: usize,
    kind: ScoreKind,
    id: &[Sample],
    ood: &[Sample],
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let cfg = model.config;
    let ranks = tie_ranks(cfg.layers, cfg.heads, seed);
    let full = HeadMask::for_config(&cfg);
    let width = cfg.head_dim() * cfg.hidden;
    let zeroed = |removed: &[(usize, usize)]| {
        let mut m = model.clone();
        for &(l, h) in removed {
            m.weights.layers[l].w_o.data_mut()[h * width..(h + 1) * width].fill(0.0);
        }
        m
    };
    let mut removed: Vec<(usize, usize)> = Vec::new();
    for _ in 0..budget {
        let mut scored = Vec::new();
        for l in 0..cfg.layers {
            let alive = cfg.heads - removed.iter().filter(|r| r.0 == l).count();
            for h in 0..cfg.heads {
                if alive > 1 && !removed.contains(&(l, h)) {
                    let mut trial = removed.clone();
                    trial.push((l, h));
                    scored.push((
                        eval_score(&zeroed(&trial), &full, kind, id, ood)?,
                        ranks[l][h],
                        (l, h),
                    ));
                }
            }
        }
        let best = scored
            .iter()
            .cloned()
            .reduce(|a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            })
            .expect("candidates");
        removed.push(best.2);
    }
    Ok(removed)
}

fn metrics_suite(seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3e7);
    let mut failures = 0;
    let fixtures = 30;
    for _ in 0..fixtures {
        let n = rng.random_range(1..40);
        let m = rng.random_range(1..40);
        // Coarse grid so ties occur.
        let mut draw = |k: usize| -> Vec<f64> {
            (0..k)
                .map(|_| rng.random_range(0..12) as f64 / 11.0)
                .collect()
        };
        let id = draw(n);
        let ood = draw(m);
        let mut wins = 0.0;
        for a in &id {
            for b in &ood {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        if auroc(&id, &ood)? != wins / (n * m) as f64 {
            failures += 1;
        }
        // Smallest threshold whose TPR reaches 0.95, then the OOD rate above it.
        let mut best = None;
        for &t in &id {
            let tpr = id.iter().filter(|&&x| x >= t).count() as f64 / n as f64;
            if tpr >= 0.95 && best.is_none_or(|b| t > b) {
                best = Some(t);
            }
        }
        let t = best.expect("max score reaches full recall");
        let expected = ood.iter().filter(|&&x| x >= t).count() as f64 / m as f64;
        if fpr95(&id, &ood)? != expected {
            failures += 1;
        }
    }
    Ok(SuiteOutcome::new(
        "metrics",
        failures == 0,
        format!("fixtures={fixtures} failures={failures}"),
    ))
}

fn serialization_suite(seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10);
    let mut failures = 0;
    let cases = 20;
    for case in 0..cases {
        let cfg = random_config(&mut rng);
        let model = Model::<f64>::init(cfg, case)?;
        let bytes = encode_model(&model)?;
        if decode::<f64>(&bytes)? != Artifact::Model(model.clone()) {
            failures += 1;
        }
        let members: Vec<Member<f64>> = (0..2)
            .map(|_| Member {
                mask: random_mask(&cfg, &mut rng),
                model: model.clone(),
            })
            .collect();
        let hydra = fuse(&model, &members)?;
        let bytes = encode_hydra(&hydra)?;
        match decode::<f64>(&bytes)? {
            Artifact::Hydra(h) if h == hydra && encode_hydra(&h)? == bytes => {}
            _ => failures += 1,
        }
    }
    Ok(SuiteOutcome::new(
        "serialization",
        failures == 0,
        format!("cases={cases} failures={failures}"),
    ))
}

fn theory_suite(seed: u64) -> Result<SuiteOutcome> {
    let trials = 200;
    let holds = proposition1_sweep(seed, trials, 6, Regime::Holds)?;
    let held = holds.iter().filter(|r| r.held()).count();
    let worst = holds
        .iter()
        .map(|r| (r.predicted_change - r.measured_change()).abs())
        .fold(0.0f64, f64::max);
    let broken = proposition1_sweep(seed, 20, 6, Regime::ViolatedHessian)?
        .iter()
        .filter(|r| !r.held())
        .count();
    Ok(SuiteOutcome::new(
        "theory",
        held == trials as usize && worst <= 1e-12 && broken == 20,
        format!(
            "held={held}/{trials} predictor_err={worst:.3e} counterexamples_failing={broken}/20"
        ),
    ))
}

fn cost_suite() -> Result<SuiteOutcome> {
    let cfg = TransformerConfig {
        layers: 1,
        hidden: 768,
        heads: 12,
        ff: 3072,
        seq_len: 196,
        vocab: 768,
        classes: 1000,
        ln_eps: 1e-6,
    };
    let full = HeadMask::for_config(&cfg);
    let pruned = HeadMask::without(&cfg, (8..12).map(|h| (0, h)))?;
    let one = cost_report(&cfg, &[full])?.per_layer[0];
    let three = cost_report(&cfg, &vec![pruned; 3])?.per_layer[0];
    let standard = 12 * 768 * 768;
    let ok = one.standard == standard && one.hydra == standard && three.hydra == 9_437_184;
    Ok(SuiteOutcome::new(
        "cost",
        ok,
        format!(
            "standard={} hydra_m1={} hydra_m3_h8={}",
            one.standard, one.hydra, three.hydra
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for outcome in run_suites(&[], 7).unwrap() {
            assert!(outcome.passed, "{}", outcome.line());
        }
    }

    #[test]
    fn suite_filter_selects_by_name() {
        let only = vec!["cost".to_string()];
        let out = run_suites(&only, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "cost");
    }
}
