use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Clean loss `½(x−θ)ᵀHᵗ(x−θ) + c_t` and noisy loss
/// `½(x−θ)ᵀHⁿ(x−θ) + gⁿᵀ(x−θ) + c_n`, both expanded around the trained
/// parameters `θ`, where the clean gradient vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLossPair {
    pub theta: DVector<f64>,
    pub h_clean: DMatrix<f64>,
    pub h_noisy: DMatrix<f64>,
    pub g_noisy: DVector<f64>,
    pub c_clean: f64,
    pub c_noisy: f64,
}

impl QuadraticLossPair {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn clean_loss(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.theta;
        0.5 * e.dot(&(&self.h_clean * &e)) + self.c_clean
    }

    pub fn noisy_loss(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.theta;
        0.5 * e.dot(&(&self.h_noisy * &e)) + self.g_noisy.dot(&e) + self.c_noisy
    }

    /// `ΔL(x) = L_noisy(x) − L_clean(x)`.
    pub fn gap(&self, x: &DVector<f64>) -> f64 {
        self.noisy_loss(x) - self.clean_loss(x)
    }

    /// Second-order prediction of `ΔL(θ+δ) − ΔL(θ)`:
    /// `gⁿᵀδ + ½ δᵀ(Hⁿ − Hᵗ)δ`. Exact for quadratic losses.
    pub fn predicted_gap_change(&self, delta: &DVector<f64>) -> Result<f64> {
        if delta.len() != self.dim() {
            return Err(Error::shape(
                "predicted_gap_change",
                format!(
                    "delta of length {} for dimension {}",
                    delta.len(),
                    self.dim()
                ),
            ));
        }
        let diff = &self.h_noisy - &self.h_clean;
        Ok(self.g_noisy.dot(delta) + 0.5 * delta.dot(&(diff * delta)))
    }

    /// Smallest eigenvalue of `Hⁿ − Hᵗ`.
    pub fn min_eig_difference(&self) -> f64 {
        let diff = &self.h_noisy - &self.h_clean;
        let sym = (&diff + diff.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    }

    /// Evaluates both losses before and after the perturbation.
    pub fn report(&self, delta: &DVector<f64>) -> Result<GapReport> {
        let moved = &self.theta + delta;
        let gap_before = self.gap(&self.theta);
        let gap_after = self.gap(&moved);
        Ok(GapReport {
            gap_before,
            gap_after,
            predicted_change: self.predicted_gap_change(delta)?,
            alignment: self.g_noisy.dot(delta),
            min_eig_difference: self.min_eig_difference(),
            clean_increase: self.clean_loss(&moved) - self.clean_loss(&self.theta),
            noisy_increase: self.noisy_loss(&moved) - self.noisy_loss(&self.theta),
        })
    }
}

/// Loss gaps around one perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub gap_before: f64,
    pub gap_after: f64,
    pub predicted_change: f64,
    /// `gⁿᵀδ`
    pub alignment: f64,
    pub min_eig_difference: f64,
    pub clean_increase: f64,
    pub noisy_increase: f64,
}

impl GapReport {
    /// Whether pruning did not shrink the gap: `ΔL(θ) ≤ ΔL(θ+δ)`.
    pub fn held(&self) -> bool {
        self.gap_before <= self.gap_after
    }

    pub fn measured_change(&self) -> f64 {
        self.gap_after - self.gap_before
    }

    pub fn table(regime: Regime, seed: u64, reports: &[GapReport]) -> String {
        let mut out = format!(
            "# gap regime={regime} seed={seed}\ntrial\tgap_before\tgap_after\tpredicted\talignment\tmin_eig\theld\n"
        );
        for (i, r) in reports.iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.gap_before,
                r.gap_after,
                r.predicted_change,
                r.alignment,
                r.min_eig_difference,
                r.held()
            ));
        }
        out
    }
}

/// Construction of the synthetic loss pair and perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `Hⁿ − Hᵗ` positive definite and `gⁿᵀδ ≥ 0`.
    Holds,
    /// `δ` along a negative-curvature direction of `Hⁿ − Hᵗ`, with `gⁿ ⟂ δ`.
    ViolatedHessian,
    /// `Hⁿ − Hᵗ` positive definite but `gⁿ` strongly opposed to `δ`.
    ViolatedAlignment,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Holds => "holds",
            Regime::ViolatedHessian => "violated-hessian",
            Regime::ViolatedAlignment => "violated-alignment",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holds" => Ok(Regime::Holds),
            "violated-hessian" => Ok(Regime::ViolatedHessian),
            "violated-alignment" => Ok(Regime::ViolatedAlignment),
            other => Err(Error::contract(
                "theory-checks",
                format!("unknown regime {other:?}"),
            )),
        }
    }
}

fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn randn_mat(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix `AAᵀ/n`.
fn gram(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = randn_mat(n, rng);
    &a * a.transpose() / n as f64
}

/// One trial, drawing from the stream `trial` of `seed`.
pub fn proposition1_trial(
    seed: u64,
    trial: u64,
    n: usize,
    regime: Regime,
) -> Result<(QuadraticLossPair, DVector<f64>, GapReport)> {
    if n < 2 {
        return Err(Error::contract("theory-checks", "dimension must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let theta = randn_vec(n, &mut rng);
    let h_clean = gram(n, &mut rng);
    let c_clean = StandardNormal.sample(&mut rng);
    let c_noisy = StandardNormal.sample(&mut rng);
    let eps = 0.1;
    let (diff, g_noisy, delta) = match regime {
        Regime::Holds => {
            let diff = gram(n, &mut rng) + DMatrix::identity(n, n) * eps;
            let delta = randn_vec(n, &mut rng);
            let mut g = randn_vec(n, &mut rng);
            if g.dot(&delta) < 0.0 {
                g = -g;
            }
            (diff, g, delta)
        }
        Regime::ViolatedHessian => {
            // Orthonormal basis; the first direction gets curvature -1.
            let q = randn_mat(n, &mut rng).qr().q();
            let eigs = DVector::from_fn(n, |i, _| if i == 0 { -1.0 } else { 0.5 + i as f64 });
            let diff = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
            let delta = q.column(0).into_owned() * 2.0;
            let g = randn_vec(n, &mut rng);
            let g = &g - &delta * (g.dot(&delta) / delta.dot(&delta));
            (diff, g, delta)
        }
        Regime::ViolatedAlignment => {
            let diff = gram(n, &mut rng) + DMatrix::identity(n, n) * eps;
            let delta = randn_vec(n, &mut rng);
            let curvature = delta.dot(&(&diff * &delta));
            let g = &delta * (-curvature / delta.dot(&delta));
            (diff, g, delta)
        }
    };
    let h_noisy = &h_clean + diff;
    let pair = QuadraticLossPair {
        theta,
        h_clean,
        h_noisy,
        g_noisy,
        c_clean,
        c_noisy,
    };
    let report = pair.report(&delta)?;
    Ok((pair, delta, report))
}

/// `trials` independent trials; trial `i` uses RNG stream `i` of `seed`.
pub fn proposition1_sweep(
    seed: u64,
    trials: u64,
    n: usize,
    regime: Regime,
) -> Result<Vec<GapReport>> {
    (0..trials)
        .map(|t| proposition1_trial(seed, t, n, regime).map(|(_, _, r)| r))
        .collect()
}
