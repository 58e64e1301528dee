//! Contrastive alignment: symmetric InfoNCE, Adam, and the training loop.

pub mod loss;
pub mod optim;
pub mod train;

pub use loss::{info_nce, info_nce_full, normalize_rows, normalize_rows_backward, NceOutput};
pub use optim::Adam;
pub use train::{eval_loss, train, BestSnapshot, EpochStats, TrainConfig, TrainOutcome};
