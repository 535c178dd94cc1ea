//! Threshold-free detection metrics with in-distribution samples as the
//! positive class and higher scores meaning "more in-distribution".

use crate::error::{Error, Result};

fn check(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract(
            "uq-metrics",
            "detection metrics need non-empty ID and OOD score sets",
        ));
    }
    if id.iter().chain(ood).any(|x| !x.is_finite()) {
        return Err(Error::contract("uq-metrics", "non-finite detection score"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `P(id > ood) + ½·P(id = ood)` over all pairs.
///
/// The numerator is accumulated as an integer count of half-credits, so the
/// value is a single rounded division.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let ood = sorted(ood);
    let mut half_credits: u128 = 0;
    for &x in id {
        let below = ood.partition_point(|&o| o < x);
        let up_to = ood.partition_point(|&o| o <= x);
        half_credits += 2 * below as u128 + (up_to - below) as u128;
    }
    let pairs = 2 * id.len() as u128 * ood.len() as u128;
    Ok(half_credits as f64 / pairs as f64)
}

/// False-positive rate at the highest threshold whose true-positive rate
/// reaches 95%; scores equal to the threshold count as accepted.
pub fn fpr95(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let desc: Vec<f64> = sorted(id).into_iter().rev().collect();
    let k = (95 * desc.len()).div_ceil(100);
    let threshold = desc[k - 1];
    let accepted = ood.iter().filter(|&&o| o >= threshold).count();
    Ok(accepted as f64 / ood.len() as f64)
}

/// Area under the precision-recall curve with ID as positives: trapezoids
/// between consecutive operating points, one point per distinct score,
/// starting from recall 0 and precision 1.
pub fn aupr(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = id.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_recall, mut prev_precision) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let (id, ood) = ([0.9, 0.8], [0.2, 0.1]);
        assert_eq!(auroc(&id, &ood).unwrap(), 1.0);
        assert_eq!(fpr95(&id, &ood).unwrap(), 0.0);
        assert_eq!(aupr(&id, &ood).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_chance() {
        let id = [0.5; 7];
        let ood = [0.5; 3];
        assert_eq!(auroc(&id, &ood).unwrap(), 0.5);
        assert_eq!(fpr95(&id, &ood).unwrap(), 1.0);
    }

    #[test]
    fn reversed_roles_complement() {
        let id = [0.3, 0.7, 0.9, 0.1];
        let ood = [0.2, 0.8, 0.05];
        let a = auroc(&id, &ood).unwrap();
        let b = auroc(&ood, &id).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty() {
        assert!(auroc(&[], &[0.1]).is_err());
        assert!(fpr95(&[0.1], &[]).is_err());
        assert!(aupr(&[f64::NAN], &[0.1]).is_err());
    }
}
