use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} qubits, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("qubit index {index} out of range for a {qubits}-qubit register")]
    QubitIndex { index: usize, qubits: usize },

    #[error("matrix dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("dense representation of {qubits} qubits exceeds the cap of {cap}")]
    DenseCap { qubits: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("operator pool exhausted with McLachlan distance {achieved:.3e} >= cut {cut:.3e}")]
    PoolExhausted { achieved: f64, cut: f64 },

    #[error("time step underflow at t = {time:.6}: dt = {dt:.3e} (N_theta = {n_theta})")]
    StepUnderflow { time: f64, dt: f64, n_theta: usize },

    #[error("imaginary-time evolution stagnated: energy {energy:.10}, gradient norm {gradient_norm:.3e}")]
    Stagnation { energy: f64, gradient_norm: f64 },

    #[error("missing component: {0}")]
    MissingComponent(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
