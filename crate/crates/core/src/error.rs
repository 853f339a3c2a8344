use thiserror::Error;

use crate::expr::ExprError;
use crate::optimize::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the toolkit. Every variant names the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: invalid argument: {message}")]
    InvalidArgument {
        module: &'static str,
        message: String,
    },

    #[error("expr: {0}")]
    Expr(#[from] ExprError),

    #[error("forms: evaluating `{what}` at x = ({x:.6}, {y:.6}), u = {u}: {source}")]
    Evaluation {
        what: &'static str,
        x: f64,
        y: f64,
        u: f64,
        #[source]
        source: ExprError,
    },

    #[error("validation: {condition} violated: {message}")]
    Validation {
        condition: &'static str,
        message: String,
    },

    #[error("functionals: field lies in the zero-mass set (K_q(u) = {k:e}); quotient undefined")]
    EtaMembership { k: f64 },

    #[error("functionals: Nehari projection infeasible: lambda*K_q(v) - |v|_q^q = {denominator:e}")]
    ProjectionInfeasible { denominator: f64 },

    #[error("functionals: Nehari projection requires q > p (got p = {p}, q = {q})")]
    WrongBranch { p: f64, q: f64 },

    #[error("functionals: primitive integration did not converge on [0, {u}] after depth {depth}")]
    Integration { u: f64, depth: usize },

    #[error("optimize: line search stalled at iteration {iteration} (step below {min_step:e})")]
    Stalled {
        iteration: usize,
        min_step: f64,
        /// Last accepted iterate and its objective value.
        x: Vec<f64>,
        value: f64,
        trace: IterationTrace,
    },

    #[error("optimize: no usable initialization: {0}")]
    Initialization(String),

    #[error("optimize: no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            module,
            message: message.into(),
        }
    }
}
