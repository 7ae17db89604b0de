//! Losses, optimizer, learning-rate schedule, and the training loops.

mod data;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use data::{input_features, training_sample, Sample};
pub use loss::{cross_entropy, lovasz_softmax, softmax_rows, total_loss, LossValue};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::{onecycle_lr, OneCycleConfig};
pub use trainer::{
    finetune, train, validate_fast, validation_scores, EarlyStopping, EpochRecord, StopReason,
    TrainConfig, TrainHistory, ValScores, Validation,
};
