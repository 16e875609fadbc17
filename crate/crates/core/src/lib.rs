//! Hand-object dynamics narration and a desk-scale dual-framerate
//! video-language model.
//!
//! Numeric code is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for common use.

pub mod detection;
pub mod geometry;
pub mod io;
pub mod model;
pub mod narrate;
pub mod num;
pub mod select;
pub mod tensor;
pub mod train;
pub mod trajectory;

use thiserror::Error;

pub use num::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type EgoVideo32 = model::EgoVideo<f32>;
pub type EgoVideo64 = model::EgoVideo<f64>;
pub type Classifier32 = select::MlpClassifier<f32>;
pub type Classifier64 = select::MlpClassifier<f64>;

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Transport,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Detection(#[from] detection::DetectionError),
    #[error(transparent)]
    Trajectory(#[from] trajectory::TrajectoryError),
    #[error(transparent)]
    Narrate(#[from] narrate::NarrateError),
    #[error(transparent)]
    Select(#[from] select::SelectError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

fn tensor_kind(e: &tensor::TensorError) -> ErrorKind {
    match e {
        tensor::TensorError::Instability { .. } => ErrorKind::Numerical,
        _ => ErrorKind::Data,
    }
}

fn model_kind(e: &model::ModelError) -> ErrorKind {
    match e {
        model::ModelError::Tensor(t) => tensor_kind(t),
        model::ModelError::Config(_) => ErrorKind::Usage,
        _ => ErrorKind::Data,
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) => ErrorKind::Usage,
            Error::Narrate(e) if e.is_transport() => ErrorKind::Transport,
            Error::Tensor(e) => tensor_kind(e),
            Error::Model(e) => model_kind(e),
            Error::Train(train::TrainError::Numerical(_)) => ErrorKind::Numerical,
            Error::Train(train::TrainError::Model(e)) => model_kind(e),
            Error::Train(train::TrainError::Config(_)) => ErrorKind::Usage,
            Error::Io(io::IoError::Config(_)) => ErrorKind::Usage,
            Error::Select(select::SelectError::Config(_)) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
