//! Experiment documents and the end-to-end pipeline: teachers, caching, distillation,
//! evaluation, and ablation sweeps.

mod ablate;
mod config;
mod pipeline;

pub use ablate::{run_ablation, variant_config, AblationRow, AblationTable, RunResult};
pub use config::{
    format_head, format_schedule, format_stages, parse_head, parse_schedule, parse_stages, AblationAxis, AblationConfig,
    AugmentConfig, DatasetSource, EvalSettings, ExperimentConfig, OptimConfig, PretrainConfig, StudentConfig, TeacherConfig,
    TeacherOrigin,
};
pub use pipeline::{
    run_experiment,
    build_teacher, build_teachers, cast_network, classifier_accuracy, distillation_config, eval_config, eval_taps, evaluate,
    head_output_tap, load_splits, pairing, pretrain_supervised, student_policy, student_spec, teacher_handles, teacher_policy,
    teacher_spec, view_spec, CacheStore, Pretrained, RunOutcome, Splits,
};

use crate::augment::AugmentError;
use crate::data::FormatError;
use crate::distill::DistillError;
use crate::eval::EvalError;
use crate::models::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error{}: {msg}", line.map(|n| format!(" on line {n}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ExperimentError {
    pub fn config(msg: impl Into<String>) -> Self {
        ExperimentError::Config { line: None, msg: msg.into() }
    }
}
