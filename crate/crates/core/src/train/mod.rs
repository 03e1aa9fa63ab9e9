//! Optimization: losses, Adam, negative sampling and the epoch loop.

mod adam;
mod epoch;
mod loss;
mod sampler;

pub use adam::AdamState;
pub use epoch::{train_epoch, train_epoch_pairs, EpochLog, EpochStats, TrainConfig, Trainer};
pub use loss::{bce_loss, sigmoid, squared_loss, vq_loss, LossGrad, VqLoss};
pub use sampler::NegativeSampler;
