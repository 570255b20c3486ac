use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty graph")]
    EmptyGraph,
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),
    #[error("operation requires an undirected graph")]
    Directed,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("{0} did not converge after {1} iterations")]
    NoConvergence(&'static str, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero matrix")]
    ZeroMatrix,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("dense operator of size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("relation {0} contains a cycle")]
    CyclicRelation(usize),
    #[error("edge ({0}, {1}) has no relation")]
    MissingRelation(usize, usize),
    #[error("Fourier component {0} vanishes")]
    VanishingComponent(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("iteration {iteration}: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
