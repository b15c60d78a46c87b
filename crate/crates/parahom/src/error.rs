use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ellipticity violation at {context}: symmetric part has eigenvalue {eigenvalue:.6e} < mu = {mu:.6e}")]
    EllipticityViolation {
        context: String,
        eigenvalue: f64,
        mu: f64,
    },

    #[error("point (x, t) = ({x:?}, {t}) lies outside the macroscopic domain")]
    OutOfDomain { x: [f64; 2], t: f64 },

    #[error("invalid Lebesgue exponent {value}; exponents must satisfy 1 <= p <= inf")]
    InvalidExponent { value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("incompatible right-hand side: torus mean {mean:.3e} exceeds tolerance {tol:.3e}")]
    IncompatibleRhs { mean: f64, tol: f64 },

    #[error("linear solver diverged after {iterations} iterations (best relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("time-step solve diverged at step {step} (relative residual {residual:.3e})")]
    StepSolverDiverged { step: usize, residual: f64 },

    #[error("grid under-resolved for eps = {eps}: {detail}")]
    UnderResolved { eps: f64, detail: String },

    #[error("eps = {eps} too large: requires eps <= {limit} ({reason})")]
    EpsilonTooLarge { eps: f64, limit: f64, reason: String },

    #[error("flux mismatch component ({i_bar}, {j}) has torus mean {mean:.3e}, expected zero")]
    MeanNotZero { i_bar: usize, j: usize, mean: f64 },

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("unknown strategy '{name}'; available: {available}")]
    UnknownStrategy { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage '{stage}' failed at eps = {eps}: {source}")]
    Stage {
        stage: &'static str,
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    At {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str, eps: f64) -> Error {
        Error::Stage {
            stage,
            eps,
            source: Box::new(self),
        }
    }

    pub fn at(self, context: impl Into<String>) -> Error {
        Error::At {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
