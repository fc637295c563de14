//! Cross-domain visual imitation at desk scale: a small autodiff engine, a
//! 2-D stacking simulator with paired renderings, time-contrastive and
//! goal-conditioned representation objectives, and evaluation protocols.

pub mod dataset;
pub mod eval;
pub mod numerics;
pub mod repr;
pub mod sim;

/// Training and checkpoints run in `f64`.
pub type Tensor64 = numerics::Tensor<f64>;
/// Tracking and large evaluation sweeps run in `f32`.
pub type Tensor32 = numerics::Tensor<f32>;
pub type Encoder64 = repr::EncoderModel<f64>;
pub type Encoder32 = repr::EncoderModel<f32>;
pub type Policy64 = repr::PolicyHead<f64>;
pub type Policy32 = repr::PolicyHead<f32>;
