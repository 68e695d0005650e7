//! Cosine k-NN, the linear probe with its normalization front end, feature MSE, and
//! layer-wise evaluation reports.

mod bank;
mod knn;
mod layerwise;
mod probe;

pub use bank::{feature_mse, l2_normalize_rows, FeatureBank};
pub use knn::{accuracy, knn_classify, neighbor_order, similarities, vote};
pub use layerwise::{extract_features, layerwise_evaluate, EvalConfig, EvaluationReport, LayerReport, TapSource, ViewSpec};
pub use probe::{linear_probe, probe_front_end, ProbeConfig, ProbeResult, Standardizer, STD_EPS};

use crate::augment::AugmentError;
use crate::models::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty feature bank")]
    EmptyBank,
    #[error("k = {k} invalid for a bank of {n} rows")]
    InvalidK { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate features: {0}")]
    Degenerate(String),
    #[error("evaluation needs labelled data")]
    MissingLabels,
    #[error("unknown layer tap `{0}`")]
    UnknownTap(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}
