//! Pre-norm transformer encoder for sequence classification.

mod config;
mod forward;
mod mask;
mod train;
mod weights;

pub use config::TransformerConfig;
pub(crate) use forward::{attention, check_tokens, classify, embed, head_columns, mlp};
pub use forward::{
    cls_head_outputs, forward_layer, forward_layer_masked, layer_forward, mha, mha_eager,
    model_logits, Realization,
};
pub use mask::HeadMask;
pub use train::{accuracy_on, argmax, batch_loss_grad, train_steps, Jitter, TrainConfig};
pub use weights::{expected_shapes, LayerWeights, Model, Weights};
