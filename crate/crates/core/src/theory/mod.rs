//! Checks of the loss-gap argument: pruning widens the gap between noisy-set
//! and clean-set loss when the Hessian difference is positive definite and the
//! perturbation is aligned with the noisy gradient.

mod probe;
mod quadratic;

pub use probe::{assumption_probe, pruning_delta, ProbeReport, COHERENCE_WARNING};
pub use quadratic::{proposition1_sweep, proposition1_trial, GapReport, QuadraticLossPair, Regime};
