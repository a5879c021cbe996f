use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("not admissible: {0}")]
    Inadmissible(String),
    #[error("splitting failed: {msg} (residual {residual:.3e})")]
    Splitting { msg: String, residual: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no Hermitian structure: {0}")]
    NoHermitian(String),
    #[error("no half-twist table entry: {0}")]
    HalfTwist(String),
    #[error("diagram error at slice {slice}: {msg}")]
    Diagram { slice: usize, msg: String },
    #[error("inadmissible diagram: {0}")]
    InadmissibleDiagram(String),
    #[error("no ambient presentation found; tried {0}")]
    NoPresentation(String),
    #[error("r = {0} is divisible by 4; the 3-manifold invariant is not defined")]
    RDivisibleBy4(u32),
    #[error("Kirby expansion needs {terms} terms, budget is {budget}")]
    Budget { terms: u128, budget: u128 },
    #[error("module mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
