use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 15;

const NLL_FLOOR: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

/// Maximum softmax probability.
pub fn msp(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Labelled in-distribution predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl PredictionSet {
    /// Checks that every row is a probability vector and every label indexes it.
    pub fn new<S: Scalar>(probs: Vec<Vec<S>>, labels: Vec<usize>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("uq-metrics", "empty prediction set"));
        }
        if probs.len() != labels.len() {
            return Err(Error::contract(
                "uq-metrics",
                format!("{} predictions for {} labels", probs.len(), labels.len()),
            ));
        }
        let probs: Vec<Vec<f64>> = probs
            .into_iter()
            .map(|p| p.into_iter().map(|x| x.to_f64_lossy()).collect())
            .collect();
        for (i, (p, &y)) in probs.iter().zip(&labels).enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(0.0..=1.0 + SIMPLEX_TOL).contains(&x))
                || (sum - 1.0).abs() > SIMPLEX_TOL
            {
                return Err(Error::contract(
                    "uq-metrics",
                    format!("row {i} is not a probability vector (sum {sum})"),
                ));
            }
            if y >= p.len() {
                return Err(Error::contract(
                    "uq-metrics",
                    format!("label {y} out of range for {} classes", p.len()),
                ));
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.probs.iter().map(|p| msp(p)).collect()
    }

    fn correct(&self) -> Vec<bool> {
        self.probs
            .iter()
            .zip(&self.labels)
            .map(|(p, &y)| argmax(p) == y)
            .collect()
    }

    /// Fraction of argmax hits, ties resolved to the lowest class index.
    pub fn accuracy(&self) -> f64 {
        self.correct().iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    /// Mean squared distance between the probability vector and the one-hot label.
    pub fn brier(&self) -> f64 {
        let total: f64 = self
            .probs
            .iter()
            .zip(&self.labels)
            .map(|(p, &y)| {
                p.iter()
                    .enumerate()
                    .map(|(c, &q)| {
                        let t = if c == y { 1.0 } else { 0.0 };
                        (q - t) * (q - t)
                    })
                    .sum::<f64>()
            })
            .sum();
        total / self.len() as f64
    }

    /// Mean negative log-probability of the label, floored at `1e-12`.
    pub fn nll(&self) -> f64 {
        let total: f64 = self
            .probs
            .iter()
            .zip(&self.labels)
            .map(|(p, &y)| -p[y].max(NLL_FLOOR).ln())
            .sum();
        total / self.len() as f64
    }

    /// Expected calibration error over equal-width confidence bins
    /// `(k/B, (k+1)/B]` (the first bin also takes confidence 0).
    pub fn ece(&self, bins: usize) -> Result<f64> {
        check_bins(bins)?;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); bins];
        for (i, conf) in self.confidences().into_iter().enumerate() {
            groups[equal_width_bin(conf, bins)].push(i);
        }
        Ok(self.binned_gap(&groups))
    }

    /// Adaptive calibration error over equal-mass bins of the sorted
    /// confidences; the first `N mod B` bins hold one extra sample.
    pub fn aece(&self, bins: usize) -> Result<f64> {
        check_bins(bins)?;
        let conf = self.confidences();
        let mut order: Vec<usize> = (0..conf.len()).collect();
        order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]));
        let groups = equal_mass_sizes(conf.len(), bins)
            .into_iter()
            .scan(0, |start, size| {
                let g = order[*start..*start + size].to_vec();
                *start += size;
                Some(g)
            })
            .collect::<Vec<_>>();
        Ok(self.binned_gap(&groups))
    }

    fn binned_gap(&self, groups: &[Vec<usize>]) -> f64 {
        let conf = self.confidences();
        let correct = self.correct();
        let n = self.len() as f64;
        groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| {
                let m = g.len() as f64;
                let acc = g.iter().filter(|&&i| correct[i]).count() as f64 / m;
                let avg_conf = g.iter().map(|&i| conf[i]).sum::<f64>() / m;
                (m / n) * (acc - avg_conf).abs()
            })
            .sum()
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::contract("uq-metrics", "bin count must be >= 1"));
    }
    Ok(())
}

pub(crate) fn equal_width_bin(conf: f64, bins: usize) -> usize {
    let k = (conf * bins as f64).ceil() as i64 - 1;
    k.clamp(0, bins as i64 - 1) as usize
}

/// Bin sizes for `n` samples in `bins` equal-mass bins.
pub(crate) fn equal_mass_sizes(n: usize, bins: usize) -> Vec<usize> {
    (0..bins)
        .map(|b| n / bins + usize::from(b < n % bins))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(probs: &[&[f64]], labels: &[usize]) -> PredictionSet {
        PredictionSet::new(probs.iter().map(|p| p.to_vec()).collect(), labels.to_vec()).unwrap()
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp(&[0.5, 0.5]), 0.5);
        assert_eq!(msp(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn perfect_predictions() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(s.accuracy(), 1.0);
        assert_eq!(s.brier(), 0.0);
        assert_eq!(s.nll(), 0.0);
        assert_eq!(s.ece(15).unwrap(), 0.0);
    }

    #[test]
    fn uniform_binary_closed_form() {
        let s = set(&[&[0.5, 0.5], &[0.5, 0.5]], &[0, 1]);
        assert!((s.brier() - 0.5).abs() < 1e-15);
        assert!((s.nll() - std::f64::consts::LN_2).abs() < 1e-15);
        // Ties go to class 0.
        assert_eq!(s.accuracy(), 0.5);
    }

    #[test]
    fn confident_and_wrong_is_fully_miscalibrated() {
        let s = set(&[&[1.0, 0.0], &[1.0, 0.0]], &[1, 1]);
        assert_eq!(s.ece(15).unwrap(), 1.0);
        assert_eq!(s.aece(15).unwrap(), 1.0);
    }

    #[test]
    fn rejects_non_simplex_rows() {
        assert!(PredictionSet::new(vec![vec![0.7, 0.7]], vec![0]).is_err());
        assert!(PredictionSet::new(vec![vec![1.0, 0.0]], vec![2]).is_err());
        assert!(PredictionSet::new(Vec::<Vec<f64>>::new(), vec![]).is_err());
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(equal_width_bin(0.0, 5), 0);
        assert_eq!(equal_width_bin(0.2, 5), 0);
        assert_eq!(equal_width_bin(0.2000001, 5), 1);
        assert_eq!(equal_width_bin(1.0, 5), 4);
        assert_eq!(equal_mass_sizes(10, 3), vec![4, 3, 3]);
    }
}
