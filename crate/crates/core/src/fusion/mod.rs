//! Fusion of differently pruned members into one model: per-member attention
//! on grouped projections and one merged MLP per layer.

mod cost;
mod hydra;
mod merge;

pub use cost::{cost_report, CostReport, LayerCost, ModelTotals};
pub use hydra::{
    fuse, fused_forward_layer, fused_mha, stack_to_wide, wide_to_stack, HydraLayer, HydraModel,
    MemberAttention,
};
pub use merge::{merge_mlp, MergedMlp};
