use serde::{Deserialize, Serialize};

use super::calibration::{msp, PredictionSet};
use super::ood::{aupr, auroc, fpr95};
use crate::error::Result;

/// Accuracy, calibration and OOD-detection summary of one model on one
/// ID/OOD dataset pair. ECE values are fractions, not percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_id: usize,
    pub n_ood: usize,
    pub bins: usize,
    pub accuracy: f64,
    pub brier: f64,
    pub nll: f64,
    pub ece: f64,
    pub aece: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub aupr: f64,
}

impl EvalReport {
    /// Scores OOD detection with the maximum softmax probability.
    pub fn compute(id: &PredictionSet, ood_probs: &[Vec<f64>], bins: usize) -> Result<Self> {
        let id_scores = id.confidences();
        let ood_scores: Vec<f64> = ood_probs.iter().map(|p| msp(p)).collect();
        Ok(Self {
            n_id: id.len(),
            n_ood: ood_probs.len(),
            bins,
            accuracy: id.accuracy(),
            brier: id.brier(),
            nll: id.nll(),
            ece: id.ece(bins)?,
            aece: id.aece(bins)?,
            auroc: auroc(&id_scores, &ood_scores)?,
            fpr95: fpr95(&id_scores, &ood_scores)?,
            aupr: aupr(&id_scores, &ood_scores)?,
        })
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "n_id={}\nn_ood={}\nbins={}\naccuracy={}\nbrier={}\nnll={}\nece={}\naece={}\nauroc={}\nfpr95={}\naupr={}\n",
            self.n_id,
            self.n_ood,
            self.bins,
            self.accuracy,
            self.brier,
            self.nll,
            self.ece,
            self.aece,
            self.auroc,
            self.fpr95,
            self.aupr
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_block_lists_every_metric() {
        let id = PredictionSet::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![0, 1]).unwrap();
        let r = EvalReport::compute(&id, &[vec![0.5, 0.5]], 15).unwrap();
        let text = r.to_text();
        for key in [
            "accuracy", "brier", "nll", "ece", "aece", "auroc", "fpr95", "aupr",
        ] {
            assert!(text.contains(&format!("\n{key}=")), "{key}");
        }
        assert_eq!(r.auroc, 1.0);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
