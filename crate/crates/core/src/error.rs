use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point at depth {z} is behind the camera")]
    BehindCamera { z: f64 },

    #[error("mesh is empty: {0}")]
    EmptyMesh(String),

    #[error("object mask is empty")]
    EmptyMask,

    #[error("degenerate features: masked covariance has rank {rank} < 3")]
    DegenerateFeatures { rank: usize },

    #[error("feature container format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("non-finite loss at gradient probe {probe}")]
    NonFiniteGradient { probe: usize },

    #[error("candidate {index}: {source}")]
    Candidate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pair sampling exhausted: {found} of {requested} pairs after {attempts} attempts")]
    SamplingExhausted {
        requested: usize,
        found: usize,
        attempts: usize,
    },

    #[error("records without prediction or ground truth: {}", .0.join(", "))]
    IncompleteRecords(Vec<String>),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage and candidate wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Candidate { source, .. } => source.root(),
            other => other,
        }
    }
}
