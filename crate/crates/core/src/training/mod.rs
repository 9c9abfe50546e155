//! Splits, optimizer, metric, checkpoints, the training loop and evaluation.

pub mod adam;
pub mod auc;
pub mod checkpoint;
pub mod evaluate;
pub mod export;
pub mod split;
pub mod trainer;

pub use adam::Adam;
pub use auc::auc;
pub use checkpoint::Checkpoint;
pub use evaluate::{evaluate, knowledge_state, Evaluation, ItemPrediction, StateRow, Weights};
pub use split::{split_60_20_20, split_samples, Sample, Split};
pub use trainer::{thread_pool, train, Datasets, EpochMetrics, StopReason, TrainRun};
