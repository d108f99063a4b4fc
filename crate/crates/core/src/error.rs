use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty matrix list")]
    EmptyList,

    #[error("no sample out of {drawn} fell inside the ellipsoid intersection")]
    NoSampleInIntersection { drawn: usize },

    #[error("node {node} out of range for a graph with {n_nodes} nodes")]
    NodeOutOfRange { node: usize, n_nodes: usize },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("graph mismatch: network has {expected} nodes but {found} agent states were given")]
    GraphMismatch { expected: usize, found: usize },

    #[error("all weights are zero; Q(x) is singular")]
    AllZeroWeights,

    #[error("point is outside the feasible manifold (s = {s}, epsilon = {epsilon})")]
    NotInManifold { s: f64, epsilon: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("assumption violated: {0}")]
    InvalidAssumption(String),

    #[error("grid search supports at most 4 agents, got {0}")]
    TooManyAgents(usize),

    #[error("instance generation failed after {rejections} rejections")]
    GenerationFailed { rejections: usize },

    #[error("numerical divergence at t = {t}: {detail}")]
    NumericalDivergence { t: f64, detail: String },

    #[error("consensus was never reached")]
    ConsensusNeverReached,

    #[error("weight matrix is singular (all fusion weights zero)")]
    SingularWeightMatrix,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyList => "EmptyList",
            Error::NoSampleInIntersection { .. } => "NoSampleInIntersection",
            Error::NodeOutOfRange { .. } => "NodeOutOfRange",
            Error::InvalidSize(_) => "InvalidSize",
            Error::SelfLoop(_) => "SelfLoop",
            Error::DuplicateEdge(..) => "DuplicateEdge",
            Error::Disconnected => "Disconnected",
            Error::GraphMismatch { .. } => "GraphMismatch",
            Error::AllZeroWeights => "AllZeroWeights",
            Error::NotInManifold { .. } => "NotInManifold",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidBounds(_) => "InvalidBounds",
            Error::InvalidAssumption(_) => "InvalidAssumption",
            Error::TooManyAgents(_) => "TooManyAgents",
            Error::GenerationFailed { .. } => "GenerationFailed",
            Error::NumericalDivergence { .. } => "NumericalDivergence",
            Error::ConsensusNeverReached => "ConsensusNeverReached",
            Error::SingularWeightMatrix => "SingularWeightMatrix",
            Error::Config { .. } => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
