//! Ensemble member construction by structured attention-head pruning.

mod ablation;
mod budget;
mod circuit;
mod members;
mod report;
mod taylor;

pub use ablation::{ablate_perm, ablate_temp, TempAblation};
pub use budget::{tie_ranks, PruneBudget};
pub use circuit::{eval_score, extract_circuit, sample_from_ranking, CircuitOptions, ScoreKind};
pub use members::{make_members, Member, MemberData, MemberOptions, Strategy};
pub use report::{CircuitRanking, ScoreReport};
pub use taylor::{
    calibration_subset, head_scores_from_gradients, taylor_prune, taylor_scores, HeadScore,
    TaylorOptions, DEFAULT_CALIB_BATCH,
};
