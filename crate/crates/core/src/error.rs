use thiserror::Error;

use crate::domain::RadialField;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("stencil needs at least 3 nodes, grid has {0}")]
    Stencil(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("positivity violated: {what} has minimum {min:e} at node {node}")]
    Positivity { what: String, min: f64, node: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("trial function support reaches the truncation radius")]
    Support,

    #[error("decay violation: {0}")]
    Decay(String),

    #[error("singular node {node} at r = {r}: {reason}")]
    SingularNode { node: usize, r: f64, reason: String },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    /// Scalar-flat solve produced no positive factor; the offending solution is kept when one exists.
    #[error("no positive scalar-flat factor (min u = {min:e}); Yamabe constant appears nonpositive")]
    NonPositiveYamabe { min: f64, solution: Option<Box<RadialField>> },

    #[error("flow singularity at t = {t}: {reason}")]
    FlowSingularity { t: f64, reason: String },

    #[error("mass undefined: {0}")]
    MassUndefined(String),

    #[error("undefined fit: {0}")]
    UndefinedFit(String),

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
