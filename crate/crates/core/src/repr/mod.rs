//! Encoder, heads, objectives, training and checkpoints.

pub mod checkpoint;
pub mod losses;
pub mod model;
pub mod train;

pub use losses::LossKind;
pub use model::{EncoderConfig, EncoderModel, GoalEncoding, PairClassifier, PolicyConfig, PolicyHead};
pub use train::{train, TrainConfig, TrainOutput, TrainedModels};
