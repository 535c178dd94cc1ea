//! Head-pruned transformer ensembles fused into a single model.

pub mod data;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod pruning;
pub mod scalar;
pub mod theory;
pub mod transformer;
pub mod verify;

pub use error::{Error, FormatError, Result};
pub use fusion::HydraModel;
pub use numerics::Tensor;
pub use scalar::Scalar;
pub use transformer::{HeadMask, LayerWeights, Model, TransformerConfig, Weights};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type HydraModel64 = HydraModel<f64>;
pub type HydraModel32 = HydraModel<f32>;
