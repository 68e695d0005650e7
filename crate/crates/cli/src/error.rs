use regdistill::augment::AugmentError;
use regdistill::data::FormatError;
use regdistill::distill::DistillError;
use regdistill::eval::EvalError;
use regdistill::experiment::ExperimentError;
use regdistill::models::ModelError;
use regdistill::tensor::TensorError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn tensor_code(e: &TensorError) -> u8 {
    match e {
        TensorError::NonFinite { .. } => EXIT_NUMERIC,
        _ => 1,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::InvalidSpec(_) | ModelError::UnknownTap(_) => EXIT_CONFIG,
        ModelError::Tensor(t) => tensor_code(t),
    }
}

fn augment_code(_: &AugmentError) -> u8 {
    EXIT_CONFIG
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Experiment(e) => match e {
                ExperimentError::Config { .. } => EXIT_CONFIG,
                ExperimentError::Format(_) => EXIT_IO,
                ExperimentError::Model(m) => model_code(m),
                ExperimentError::Augment(a) => augment_code(a),
                ExperimentError::Tensor(t) => tensor_code(t),
                ExperimentError::Eval(v) => match v {
                    EvalError::UnknownTap(_) | EvalError::MissingLabels | EvalError::InvalidK { .. } => EXIT_CONFIG,
                    EvalError::Tensor(t) => tensor_code(t),
                    EvalError::Model(m) => model_code(m),
                    EvalError::Augment(a) => augment_code(a),
                    _ => 1,
                },
                ExperimentError::Distill(d) => match d {
                    DistillError::Config(_) | DistillError::TeacherUnavailable { .. } => EXIT_CONFIG,
                    DistillError::NumericFailure { .. } => EXIT_NUMERIC,
                    DistillError::Format(_) => EXIT_IO,
                    DistillError::Tensor(t) => tensor_code(t),
                    DistillError::Model(m) => model_code(m),
                    DistillError::Augment(a) => augment_code(a),
                },
            },
        }
    }
}
