use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("edge references node {id} but the graph has {num_nodes} nodes")]
    DanglingNode { id: usize, num_nodes: usize },

    #[error("feature row {row} has {found} columns, expected {expected}")]
    FeatureDimension {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid probability {name} = {value}")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    InvalidNode { node: usize, num_nodes: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("only {available} absent cross-class pairs exist, {needed} noise edges requested")]
    InsufficientPairs { needed: usize, available: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("node {neighbor} is not adjacent to node {node}")]
    NotSubset { node: usize, neighbor: usize },

    #[error("episode for node {0} has already finished")]
    EpisodeFinished(usize),

    #[error("episode for node {0} has no current candidate to act on")]
    NoCandidate(usize),

    #[error("activation cache does not match the parameters it is used with")]
    StaleCache,

    #[error("ground set of {size} items exceeds the brute-force limit of {limit}")]
    GroundSetTooLarge { size: usize, limit: usize },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NonFinite(_))
    }
}
