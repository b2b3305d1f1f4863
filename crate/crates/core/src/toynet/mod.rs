//! A desk-scale two-stream detector trained with hand-written gradients.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{matched_baseline, ToyNet, ToyNetConfig, Variant};
pub use train::{cosine_lr, train, Sgd, TrainConfig, TrainOutcome};
