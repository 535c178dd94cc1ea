//! Acceptance gate: one PASS/FAIL line per criterion, with wall time against
//! its budget. Pass criterion numbers as arguments to run a subset.

mod common;

use std::time::{Duration, Instant};

use common::*;
use hydra_core::data::{generate, Sample, Split, TaskSpec};
use hydra_core::fusion::{cost_report, fuse};
use hydra_core::io::{decode, encode_model, read_manifest, replace_manifest, Artifact};
use hydra_core::metrics::{
    aupr, auroc, centroid_distances, fpr95, head_geometry, msp, PredictionSet, DEFAULT_RIDGE_SCALE,
};
use hydra_core::pruning::{
    ablate_perm, extract_circuit, head_scores_from_gradients, make_members, taylor_scores,
    CircuitOptions, Member, MemberData, MemberOptions, PruneBudget, ScoreKind, Strategy,
};
use hydra_core::theory::{proposition1_sweep, proposition1_trial, Regime};
use hydra_core::transformer::{train_steps, Realization, TrainConfig};
use hydra_core::{Error, FormatError, HeadMask, Model, Tensor, TransformerConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn fusion_oracle() -> Check {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let cases = 120;
    for case in 0..cases {
        let count = case % 4 + 1;
        let cfg = random_config(&mut r);
        let base = random_model(cfg, &mut r);
        let members: Vec<Member<f64>> = (0..count)
            .map(|_| {
                let mut model = base.clone();
                for layer in &mut model.weights.layers {
                    for t in layer.fields_mut().into_iter().take(12) {
                        for x in t.data_mut() {
                            *x += 0.2 * (r.random::<f64>() - 0.5);
                        }
                    }
                }
                Member {
                    mask: random_mask(&cfg, &mut r),
                    model,
                }
            })
            .collect();
        let hydra = fuse(&base, &members).map_err(|e| e.to_string())?;
        let tokens = random_tokens(&cfg, &mut r);
        let got = hydra.probs(&tokens).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs(
            &got,
            &member_oracle_probs(&base, &members, &tokens),
        ));
    }
    ensure(
        worst < 1e-10,
        format!("{cases} cases, M in 1..=4, max abs diff {worst:.2e} (tol 1e-10)"),
    )
}

fn ablation_equivalence() -> Check {
    let mut r = rng(102);
    let mut worst: f64 = 0.0;
    let cases = 250;
    for _ in 0..cases {
        let cfg = random_config(&mut r);
        let model = random_model(cfg, &mut r);
        let mask = random_mask(&cfg, &mut r);
        let tokens = random_tokens(&cfg, &mut r);
        let sliced = model.logits(&tokens, &mask).map_err(|e| e.to_string())?;
        let mut zeroed = model.clone();
        for (l, h) in mask.removed() {
            ablate_perm(&mut zeroed, l, h).map_err(|e| e.to_string())?;
        }
        let full = HeadMask::for_config(&cfg);
        let by_weights = zeroed.logits(&tokens, &full).map_err(|e| e.to_string())?;
        let by_realization = model
            .logits_with(&tokens, &mask, Realization::Ablation, None)
            .map_err(|e| e.to_string())?;
        worst = worst
            .max(max_abs(&sliced, &by_weights))
            .max(max_abs(&sliced, &by_realization));
    }
    ensure(
        worst < 1e-12,
        format!("{cases} cases, max abs diff {worst:.2e} (tol 1e-12)"),
    )
}

fn greedy_exactness() -> Check {
    let spec = TaskSpec {
        classes: 2,
        seq_len: 6,
        topic_tokens: 4,
        background_tokens: 8,
        ood_tokens: 8,
        ..TaskSpec::with_seed(103)
    };
    let id = generate(&spec, 64, Split::Test)
        .map_err(|e| e.to_string())?
        .samples;
    let ood = generate(&spec, 64, Split::Ood)
        .map_err(|e| e.to_string())?
        .samples;
    let cfg = TransformerConfig {
        layers: 2,
        hidden: 8,
        heads: 4,
        ff: 8,
        seq_len: spec.seq_len,
        vocab: spec.vocab(),
        classes: spec.classes,
        ln_eps: 1e-5,
    };
    let mut runs = 0;
    for seed in 0..4u64 {
        let model = random_model(cfg, &mut rng(seed));
        for kind in [ScoreKind::Acc, ScoreKind::Ood, ScoreKind::Avg] {
            for b in 1..=6 {
                let got = extract_circuit(
                    &model,
                    &PruneBudget::Global(b),
                    kind,
                    &id,
                    &ood,
                    seed,
                    &CircuitOptions::default(),
                )
                .map_err(|e| e.to_string())?;
                let want = exhaustive_greedy(&model, b, kind, &id, &ood, seed);
                if got.removals != want {
                    return Err(format!(
                        "seed {seed} {kind:?} B={b}: {:?} vs {want:?}",
                        got.removals
                    ));
                }
                runs += 1;
            }
        }
    }
    Ok(format!(
        "{runs} rankings (B=1..6, 3 score kinds, 4 models) equal the exhaustive per-step argmax"
    ))
}

fn gradient_check() -> Check {
    let cfg = TransformerConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ff: 8,
        seq_len: 4,
        vocab: 6,
        classes: 3,
        ln_eps: 1e-5,
    };
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let model = random_model(cfg, &mut r);
        let mask = random_mask(&cfg, &mut r);
        let tokens = random_tokens(&cfg, &mut r);
        let label = r.random_range(0..cfg.classes);
        let (_, grads) = model
            .loss_grad(&tokens, label, &mask, None)
            .map_err(|e| e.to_string())?;
        let named = grads.named();
        params = 0;
        for (slot, (name, g)) in named.iter().enumerate() {
            let fd = fd_slot(&model, slot, 1e-5, &|m: &Model<f64>| {
                reference_loss(m, &tokens, label, &mask)
            });
            let scale = fd
                .iter()
                .chain(g.data())
                .map(|x| x.abs())
                .fold(1e-3, f64::max);
            let err = max_abs(g.data(), &fd) / scale;
            if err >= 1e-4 {
                return Err(format!("seed {seed} {name}: relative error {err:.2e}"));
            }
            worst = worst.max(err);
            params += g.len();
        }
    }
    ensure(
        worst < 1e-4,
        format!("20 seeds x {params} parameters, max relative error {worst:.2e} (tol 1e-4)"),
    )
}

fn taylor_fidelity() -> Check {
    let hand_cfg = TransformerConfig {
        layers: 1,
        hidden: 4,
        heads: 2,
        ff: 2,
        seq_len: 2,
        vocab: 3,
        classes: 2,
        ln_eps: 1e-5,
    };
    let mut weights = Model::<f64>::init(hand_cfg, 0)
        .map_err(|e| e.to_string())?
        .weights;
    let mut grads = weights.zeros_like();
    weights.layers[0].w_q = Tensor::zeros(&[4, 4]);
    for row in 0..4 {
        for c in 0..2 {
            weights.layers[0].w_q.set(row, c, 0.5);
            grads.layers[0].w_q.set(row, c, 1.0);
        }
    }
    let hand = head_scores_from_gradients(&hand_cfg, &weights, &grads);
    if hand[0].q != 0.5 || hand[0].score != 0.5 / 3.0 {
        return Err(format!(
            "hand instance gave q0={} s0={}",
            hand[0].q, hand[0].score
        ));
    }

    let cfg = TransformerConfig {
        layers: 2,
        hidden: 4,
        heads: 2,
        ff: 4,
        seq_len: 3,
        vocab: 5,
        classes: 3,
        ln_eps: 1e-5,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = rng(2000 + seed);
        let model = random_model(cfg, &mut r);
        let mask = HeadMask::for_config(&cfg);
        let calib: Vec<Sample> = (0..6)
            .map(|i| Sample {
                tokens: random_tokens(&cfg, &mut r),
                label: Some(i % cfg.classes),
            })
            .collect();
        let got = taylor_scores(&model, &mask, &calib, calib.len()).map_err(|e| e.to_string())?;
        let mean_loss = |m: &Model<f64>| {
            calib
                .iter()
                .map(|s| reference_loss(m, &s.tokens, s.label.unwrap(), &mask))
                .sum::<f64>()
                / calib.len() as f64
        };
        let (d, d_k) = (cfg.hidden, cfg.head_dim());
        for l in 0..cfg.layers {
            let fd: Vec<Vec<f64>> = (0..3)
                .map(|p| fd_slot(&model, 3 + 16 * l + p, 1e-5, &mean_loss))
                .collect();
            for h in 0..cfg.heads {
                let mut parts = [0.0; 3];
                for (p, part) in parts.iter_mut().enumerate() {
                    let w = model.weights.layers[l].fields()[p];
                    for row in 0..d {
                        for c in h * d_k..(h + 1) * d_k {
                            *part += (w.at(row, c) * fd[p][row * d + c]).abs();
                        }
                    }
                    *part /= (d_k * d) as f64;
                }
                let want = parts.iter().sum::<f64>() / 3.0;
                let s = got
                    .iter()
                    .find(|s| s.layer == l && s.head == h)
                    .expect("every head scored");
                worst = worst.max((s.score - want).abs() / want.abs().max(1e-12));
            }
        }
    }
    ensure(
        worst < 1e-3,
        format!("hand instance exact (q0=0.5, s0=1/6); 5 models, max relative error vs FD scores {worst:.2e} (tol 1e-3)"),
    )
}

fn vit(layers: usize) -> TransformerConfig {
    TransformerConfig {
        layers,
        hidden: 768,
        heads: 12,
        ff: 3072,
        seq_len: 196,
        vocab: 768,
        classes: 1000,
        ln_eps: 1e-6,
    }
}

fn cost_accounting() -> Check {
    let one_layer = vit(1);
    let full = HeadMask::for_config(&one_layer);
    let single = cost_report(&one_layer, std::slice::from_ref(&full))
        .map_err(|e| e.to_string())?
        .per_layer[0];
    if single.standard != 12 * 768 * 768 || single.hydra != single.standard {
        return Err(format!("full single member: {single:?}"));
    }
    let eight =
        HeadMask::without(&one_layer, (8..12).map(|h| (0, h))).map_err(|e| e.to_string())?;
    let three = cost_report(&one_layer, &vec![eight; 3])
        .map_err(|e| e.to_string())?
        .per_layer[0];
    if three.hydra != 9_437_184 {
        return Err(format!("d=768, H_l=8, M=3 gave {}", three.hydra));
    }

    let mut r = rng(106);
    let (mut upper, mut lower, mut lower_applicable) = (0, 0, 0);
    let trials = 500;
    for _ in 0..trials {
        let cfg = random_config(&mut r);
        let count = r.random_range(1..=5);
        let masks: Vec<HeadMask> = (0..count).map(|_| random_mask(&cfg, &mut r)).collect();
        let c = cost_report(&cfg, &masks).map_err(|e| e.to_string())?;
        let mut up_ok = true;
        for (l, layer) in c.per_layer.iter().enumerate() {
            up_ok &= layer.hydra <= layer.deep_ensemble;
            if masks.iter().map(|m| m.alive_count(l)).sum::<usize>() >= cfg.heads {
                lower_applicable += 1;
                lower += usize::from(layer.standard <= layer.hydra);
            }
        }
        upper += usize::from(up_ok);
    }

    let cfg = vit(12);
    let pruned = HeadMask::without(&cfg, (0..12).flat_map(|l| (8..12).map(move |h| (l, h))))
        .map_err(|e| e.to_string())?;
    let totals = cost_report(&cfg, &vec![pruned; 3])
        .map_err(|e| e.to_string())?
        .params;
    let rel = |got: u64, want: f64| (got as f64 - want).abs() / want;
    let errs = [
        rel(totals.standard, 86.57e6),
        rel(totals.hydra, 116.31e6),
        rel(totals.deep_ensemble, 259.7e6),
    ];
    let detail = format!(
        "12d^2 and 9,437,184 exact; upper bound {upper}/{trials} mask sets, lower bound {lower}/{lower_applicable} layers with sum H_l >= H; ViT-B/16 totals {:.2}M / {:.2}M / {:.2}M (rel err {:.2}% / {:.2}% / {:.2}%)",
        totals.standard as f64 / 1e6,
        totals.hydra as f64 / 1e6,
        totals.deep_ensemble as f64 / 1e6,
        100.0 * errs[0],
        100.0 * errs[1],
        100.0 * errs[2]
    );
    ensure(
        upper == trials && lower == lower_applicable && errs.iter().all(|&e| e < 0.03),
        detail,
    )
}

fn metric_oracles() -> Check {
    let mut r = rng(107);
    for fixture in 0..50 {
        let n = r.random_range(1..60);
        let m = r.random_range(1..60);
        let id: Vec<f64> = (0..n)
            .map(|_| (r.random::<f64>() * 20.0).round() / 20.0)
            .collect();
        let ood: Vec<f64> = (0..m)
            .map(|_| (r.random::<f64>() * 16.0).round() / 20.0)
            .collect();
        let a = auroc(&id, &ood).map_err(|e| e.to_string())?;
        let f = fpr95(&id, &ood).map_err(|e| e.to_string())?;
        if a != pairwise_auroc(&id, &ood) || f != scan_fpr95(&id, &ood) {
            return Err(format!("fixture {fixture}: auroc {a} fpr95 {f}"));
        }
    }
    let conf = [0.5, 0.55, 0.65, 0.65, 0.75, 0.85, 0.95, 0.95, 0.9, 1.0];
    let correct = [
        true, false, true, false, true, true, true, true, false, true,
    ];
    let probs = conf.iter().map(|&c| vec![c, 1.0 - c]).collect();
    let labels = correct.iter().map(|&ok| usize::from(!ok)).collect();
    let set = PredictionSet::new(probs, labels).map_err(|e| e.to_string())?;
    let ece = set.ece(5).map_err(|e| e.to_string())?;
    let aece = set.aece(5).map_err(|e| e.to_string())?;
    if (ece - 0.075).abs() > 1e-12 || (aece - 0.165).abs() > 1e-12 {
        return Err(format!("hand fixture ece {ece} aece {aece}"));
    }
    let sep = (
        auroc(&[0.9, 0.8], &[0.1, 0.2]).map_err(|e| e.to_string())?,
        fpr95(&[0.9, 0.8], &[0.1, 0.2]).map_err(|e| e.to_string())?,
        aupr(&[0.9, 0.8], &[0.1, 0.2]).map_err(|e| e.to_string())?,
    );
    ensure(
        sep == (1.0, 0.0, 1.0),
        format!(
            "50 AUROC/FPR95 fixtures exact; ECE 0.075 and aECE 0.165 by hand; separation {sep:?}"
        ),
    )
}

fn proposition_one() -> Check {
    let holds = proposition1_sweep(108, 1000, 6, Regime::Holds).map_err(|e| e.to_string())?;
    let held = holds.iter().filter(|r| r.held()).count();
    let worst = holds
        .iter()
        .map(|r| (r.predicted_change - r.measured_change()).abs())
        .fold(0.0, f64::max);
    let mut broken = 0;
    for trial in 0..20 {
        let (_, _, rep) = proposition1_trial(108, trial, 6, Regime::ViolatedHessian)
            .map_err(|e| e.to_string())?;
        broken += usize::from(!rep.held());
    }
    ensure(
        held == 1000 && worst < 1e-12 && broken == 20,
        format!("holds 1000 trials: {held}/1000; predictor max abs error {worst:.2e}; Hessian counterexample fails {broken}/20"),
    )
}

fn geometry() -> Check {
    let s = 3f64.sqrt() / 2.0;
    let id = vec![vec![s, s], vec![s, -s], vec![-s, s], vec![-s, -s]];
    let (e, m) = centroid_distances(&id, &[vec![1.0, 0.0]], 0.0).map_err(|e| e.to_string())?;
    if (e - 1.0).abs() > 1e-12 || (m - 1.0).abs() > 1e-12 {
        return Err(format!("unit fixture gave {e} / {m}"));
    }
    let a = [[1.0, 0.0, 0.0], [0.5, 0.8, 0.0], [-0.3, 0.2, 0.6]];
    let shift = [1.0, -0.5, 0.7];
    let mut r = rng(109);
    let mut draw = |mu: &[f64]| -> Vec<f64> {
        let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
        (0..3)
            .map(|i| mu[i] + (0..3).map(|j| a[i][j] * z[j]).sum::<f64>())
            .collect()
    };
    let id: Vec<Vec<f64>> = (0..10_000).map(|_| draw(&[0.0; 3])).collect();
    let ood: Vec<Vec<f64>> = (0..10_000).map(|_| draw(&shift)).collect();
    let (e, m) = centroid_distances(&id, &ood, 0.0).map_err(|e| e.to_string())?;
    let e_true = shift.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut y = [0.0; 3];
    for i in 0..3 {
        y[i] = (-shift[i] - (0..i).map(|j| a[i][j] * y[j]).sum::<f64>()) / a[i][i];
    }
    let m_true = y.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (re, rm) = ((e - e_true).abs() / e_true, (m - m_true).abs() / m_true);

    let spec = TaskSpec::with_seed(109);
    let id = generate(&spec, 64, Split::Test)
        .map_err(|e| e.to_string())?
        .samples;
    let ood = generate(&spec, 48, Split::Ood)
        .map_err(|e| e.to_string())?
        .samples;
    let cfg = TransformerConfig {
        layers: 2,
        hidden: 8,
        heads: 4,
        ff: 8,
        seq_len: spec.seq_len,
        vocab: spec.vocab(),
        classes: spec.classes,
        ln_eps: 1e-5,
    };
    let model = random_model(cfg, &mut rng(109));
    let mask = HeadMask::without(&cfg, [(1, 0)]).map_err(|e| e.to_string())?;
    let report = head_geometry(&model, &mask, &id, &ood, 1, DEFAULT_RIDGE_SCALE)
        .map_err(|e| e.to_string())?;
    let heads = |s: &[Sample]| -> Vec<Vec<(usize, Vec<f64>)>> {
        s.iter()
            .map(|x| reference_cls_heads(&model, &x.tokens, &mask, 1))
            .collect()
    };
    let (zi, zo) = (heads(&id), heads(&ood));
    let mut pipeline: f64 = 0.0;
    for (slot, hd) in report.heads.iter().enumerate() {
        let pick = |z: &[Vec<(usize, Vec<f64>)>]| -> Vec<Vec<f64>> {
            z.iter().map(|r| r[slot].1.clone()).collect()
        };
        let (e, m) = centroid_distances(&pick(&zi), &pick(&zo), DEFAULT_RIDGE_SCALE)
            .map_err(|e| e.to_string())?;
        pipeline = pipeline
            .max((hd.euclidean - e).abs() / e)
            .max((hd.mahalanobis - m).abs() / m);
    }
    ensure(
        re < 0.05 && rm < 0.05 && pipeline < 1e-8 && report.heads.len() == 3,
        format!("model head distances vs reference outputs rel {pipeline:.1e}; unit fixture 1/1; Gaussian n=10000 euclidean {e:.4} vs {e_true:.4}, mahalanobis {m:.4} vs {m_true:.4} (rel {re:.3}, {rm:.3}; tol 0.05)"),
    )
}

/// Frozen seed bundles for the end-to-end comparison; the settings below
/// were tuned on a disjoint set of bundles.
const E2E_BUNDLES: u64 = 20;
const E2E_FIRST_TASK_SEED: u64 = 2000;
const E2E_TRAIN_STEPS: usize = 300;
const E2E_BUDGET: usize = 4;
const E2E_SCORE: ScoreKind = ScoreKind::Ood;
const E2E_VALIDATION: usize = 512;
const E2E_EVAL: usize = 2048;

fn bundle_aurocs(bundle: u64) -> Result<(f64, f64), Error> {
    let spec = TaskSpec::with_seed(E2E_FIRST_TASK_SEED + bundle);
    let train = generate(&spec, TaskSpec::DEFAULT_TRAIN, Split::Train)?.samples;
    let test = generate(&spec, E2E_EVAL + E2E_VALIDATION, Split::Test)?.samples;
    let ood = generate(&spec, E2E_EVAL + E2E_VALIDATION, Split::Ood)?.samples;
    let (test, id_val) = test.split_at(E2E_EVAL);
    let (ood, ood_val) = ood.split_at(E2E_EVAL);
    let cfg = TransformerConfig::default();
    let full = HeadMask::for_config(&cfg);
    let seed = E2E_FIRST_TASK_SEED + bundle;
    let model = Model::<f64>::init(cfg, seed)?;
    let tc = TrainConfig {
        steps: E2E_TRAIN_STEPS,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train_steps(model, &train, &full, &tc)?;
    let data = MemberData {
        train: &train,
        id_val,
        ood_val,
    };
    let opts = MemberOptions {
        score: E2E_SCORE,
        ..MemberOptions::default()
    };
    let seeds = [3 * seed, 3 * seed + 1, 3 * seed + 2];
    let members = make_members(
        &model,
        Strategy::Circuit,
        &seeds,
        &PruneBudget::Global(E2E_BUDGET),
        data,
        &opts,
    )?;
    let hydra = fuse(&model, &members)?;
    let score = |probs: Vec<Vec<f64>>| -> Vec<f64> { probs.iter().map(|p| msp(p)).collect() };
    let single = auroc(
        &score(model.predict(test, &full)?),
        &score(model.predict(ood, &full)?),
    )?;
    let fused = auroc(&score(hydra.predict(test)?), &score(hydra.predict(ood)?))?;
    Ok((single, fused))
}

fn end_to_end() -> Check {
    let mut wins = 0;
    let mut lines = Vec::new();
    for bundle in 0..E2E_BUNDLES {
        let (single, fused) = bundle_aurocs(bundle).map_err(|e| e.to_string())?;
        wins += usize::from(fused >= single);
        lines.push(format!("{single:.3}->{fused:.3}"));
    }
    let needed = (4 * E2E_BUNDLES as usize).div_ceil(5);
    ensure(
        wins >= needed,
        format!(
            "hydra AUROC >= single in {wins}/{E2E_BUNDLES} bundles (need {needed}) [{}]",
            lines.join(" ")
        ),
    )
}

fn serialization() -> Check {
    let mut r = rng(111);
    for i in 0..100 {
        let cfg = random_config(&mut r);
        let m = random_model(cfg, &mut r);
        let bytes = encode_model(&m).map_err(|e| e.to_string())?;
        let back = match decode::<f64>(&bytes).map_err(|e| e.to_string())? {
            Artifact::Model(back) => back,
            Artifact::Hydra(_) => return Err("round trip changed the artifact kind".into()),
        };
        let bits = |m: &Model<f64>| -> Vec<u64> {
            m.weights
                .named()
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()))
                .collect()
        };
        if bits(&back) != bits(&m) || encode_model(&back).map_err(|e| e.to_string())? != bytes {
            return Err(format!("model {i} changed in a round trip"));
        }
    }
    let cfg = random_config(&mut r);
    let bytes = encode_model(&random_model(cfg, &mut r)).map_err(|e| e.to_string())?;
    let kind = |b: &[u8]| match decode::<f64>(b) {
        Err(Error::Format(e)) => Some(e),
        _ => None,
    };
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let truncated = &bytes[..bytes.len() - 1];
    let mut manifest = read_manifest(&bytes).map_err(|e| e.to_string())?;
    manifest.tensors[2].offset -= 8;
    let overlapped = replace_manifest(&bytes, &manifest).map_err(|e| e.to_string())?;
    let fixtures = [
        matches!(kind(&bad_magic), Some(FormatError::BadMagic { .. })),
        matches!(kind(truncated), Some(FormatError::PayloadLength { .. })),
        matches!(kind(&overlapped), Some(FormatError::Overlap { .. })),
    ];
    ensure(
        fixtures.iter().all(|&ok| ok),
        format!(
            "100 bitwise round trips; corruption fixtures (magic, length, overlap) {fixtures:?}"
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Check); 11] = [
        (1, "fusion oracle equivalence", 60, fusion_oracle),
        (
            2,
            "ablation/structural equivalence",
            30,
            ablation_equivalence,
        ),
        (3, "greedy-step exactness", 120, greedy_exactness),
        (4, "gradient correctness", 120, gradient_check),
        (5, "taylor-formula fidelity", 60, taylor_fidelity),
        (6, "cost accounting", 1, cost_accounting),
        (7, "metric oracles", 30, metric_oracles),
        (8, "loss-gap proposition", 60, proposition_one),
        (9, "head-geometry pipeline", 60, geometry),
        (10, "directional end-to-end", 900, end_to_end),
        (11, "serialization", 30, serialization),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {id:>2} {name}: {detail} [{:.2}s / {budget}s{}]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
