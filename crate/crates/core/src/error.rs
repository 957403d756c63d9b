use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("estimator batch needs K >= 2, got K = {0}")]
    SampleSize(usize),

    #[error("SaNCE batch must be intra-task")]
    MixedTasks,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("insufficient intra-task samples for task {task}: {have} stored, need at least 2")]
    InsufficientSamples { task: u32, have: usize },

    #[error("no other task populated besides task {0}")]
    NoOtherTask(u32),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid task features: {0}")]
    InvalidFeatures(String),

    #[error("action must be finite, got {0:?}")]
    NonFiniteAction(Vec<f64>),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
