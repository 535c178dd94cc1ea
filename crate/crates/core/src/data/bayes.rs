use super::TaskSpec;
use crate::error::{Error, Result};

/// Exact class posterior of an in-distribution sequence under a uniform prior.
pub fn bayes_posterior(spec: &TaskSpec, tokens: &[usize]) -> Result<Vec<f64>> {
    if tokens.len() != spec.seq_len {
        return Err(Error::contract(
            "synth-data",
            format!("sequence length {} != {}", tokens.len(), spec.seq_len),
        ));
    }
    // The signature slot is the one position holding a signature token, so
    // the likelihood factorizes without summing over slot positions.
    let log_lik: Vec<f64> = (0..spec.classes)
        .map(|c| {
            let sig: Vec<f64> = tokens
                .iter()
                .map(|&t| spec.signature_token_prob(c, t))
                .collect();
            let slots: Vec<usize> = (0..tokens.len()).filter(|&i| sig[i] > 0.0).collect();
            slots
                .iter()
                .map(|&s| {
                    let rest: f64 = tokens
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != s)
                        .map(|(_, &t)| spec.token_prob(c, t).ln())
                        .sum();
                    sig[s].ln() + rest
                })
                .fold(f64::NEG_INFINITY, log_add)
        })
        .collect();
    let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::contract(
            "synth-data",
            "sequence has zero likelihood under every class",
        ));
    }
    let w: Vec<f64> = log_lik.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Bayes decision (posterior argmax, ties to the lowest class).
pub fn bayes_predict(spec: &TaskSpec, tokens: &[usize]) -> Result<usize> {
    let p = bayes_posterior(spec, tokens)?;
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Analytic Bayes accuracy, by exact enumeration of the sufficient
/// statistics: the signature token and the per-block token counts.
pub fn bayes_rate(spec: &TaskSpec) -> Result<f64> {
    spec.validate()?;
    let c = spec.classes;
    let n = spec.seq_len - 1;
    let ln_fact: Vec<f64> = (0..=n)
        .scan(0.0, |acc, i| {
            if i > 0 {
                *acc += (i as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    // Block probabilities for class k: blocks 0..c are the class topics,
    // block c is the background.
    let block_probs: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let mut p: Vec<f64> = (0..c)
                .map(|j| {
                    if j == k {
                        spec.own_topic
                    } else {
                        spec.other_topic
                    }
                })
                .collect();
            p.push(spec.background_prob());
            p
        })
        .collect();
    let sig_probs: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            (0..c)
                .map(|s| spec.signature_token_prob(k, spec.signature_start() + s))
                .collect()
        })
        .collect();

    let mut total = 0.0;
    let mut counts = vec![0usize; c + 1];
    enumerate_counts(&mut counts, 0, n, &mut |counts| {
        let log_multi: Vec<f64> = block_probs
            .iter()
            .map(|p| {
                let mut l = ln_fact[n];
                for (&m, &q) in counts.iter().zip(p) {
                    l -= ln_fact[m];
                    if m > 0 {
                        l += m as f64 * q.ln();
                    }
                }
                l
            })
            .collect();
        for s in 0..c {
            let best = (0..c)
                .map(|k| sig_probs[k][s] * log_multi[k].exp())
                .fold(0.0, f64::max);
            total += best / c as f64;
        }
    });
    Ok(total)
}

fn enumerate_counts(counts: &mut [usize], i: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if i + 1 == counts.len() {
        counts[i] = left;
        f(counts);
        return;
    }
    for m in 0..=left {
        counts[i] = m;
        enumerate_counts(counts, i + 1, left - m, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Split};

    #[test]
    fn posterior_is_normalized() {
        let spec = TaskSpec::default();
        let d = generate(&spec, 20, Split::Test).unwrap();
        for s in &d.samples {
            let p = bayes_posterior(&spec, &s.tokens).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uninformative_spec_has_chance_rate() {
        let spec = TaskSpec {
            signature_prob: 0.0,
            own_topic: 0.1,
            other_topic: 0.1,
            ..TaskSpec::default()
        };
        assert!((bayes_rate(&spec).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn default_rate_is_high_but_imperfect() {
        let r = bayes_rate(&TaskSpec::default()).unwrap();
        assert!(r > 0.95 && r < 1.0, "{r}");
    }
}
