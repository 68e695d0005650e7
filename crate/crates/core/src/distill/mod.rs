//! Distillation losses, frozen teachers and feature caching, and the training loop.

mod loss;
mod teacher;
mod trainer;

pub use loss::{
    combined_kd_loss, detach, kd_loss, multi_teacher_loss, multi_teacher_loss_with, regression_loss, MultiTeacherLoss, NORM_EPS,
};
pub use teacher::{cache_teacher_features, teacher_view, TeacherHandle, TeacherSource};
pub use trainer::{
    distill, student_loss, write_history_csv, DistillationConfig, EpochSummary, LossKind, StepRecord, TrainState, Trainer,
    OPTIM_PREFIX, STATE_KEY,
};

use crate::augment::AugmentError;
use crate::data::FormatError;
use crate::models::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("non-finite value in {op} at epoch {epoch}, step {step}")]
    NumericFailure { epoch: usize, step: usize, op: String },
    #[error("teacher `{id}` unavailable: {detail}")]
    TeacherUnavailable { id: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Format(#[from] FormatError),
}
