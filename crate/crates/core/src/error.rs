use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FbfError {
    /// Shapes or structural data do not fit together.
    #[error("invalid problem: {0}")]
    Spec(String),

    /// A non-finite value appeared during a computation.
    #[error("numeric error at iteration {iteration}: non-finite value in {block} ({line})")]
    Numeric {
        iteration: usize,
        block: String,
        line: String,
    },

    /// The step size violates the admissible interval.
    #[error("step-bound error: gamma = {gamma} outside [{lower}, {upper}]")]
    StepBound { gamma: f64, lower: f64, upper: f64 },

    /// Invalid solver or catalog configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A hypothesis of the convergence theorem does not hold (e.g. beta = 0).
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// A quantity cannot be evaluated with the available closed forms.
    #[error("not computable: {0}")]
    NotComputable(String),

    /// A reference computation failed (singular system, empty feasible set).
    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("i/o error: {0}")]
    Io(String),

    /// Problem file schema violation, with a JSON-pointer style path.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl From<std::io::Error> for FbfError {
    fn from(e: std::io::Error) -> Self {
        FbfError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FbfError>;
