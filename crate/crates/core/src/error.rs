use thiserror::Error;

use crate::torus::TorusPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// `det U(x)` (or another 2x2 matrix that must be inverted) vanished.
    #[error("singular matrix at ({:.6}, {:.6}): |det| = {det:.3e}", point.x1(), point.x2())]
    SingularMatrix { point: TorusPoint, det: f64 },

    #[error("flow integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("diffeomorphism inversion did not converge ({iterations} iterations, residual {residual:.3e})")]
    Inversion { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips [`Error::Context`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SingularMatrix { .. } | Error::Integration { .. } | Error::Inversion { .. }
        )
    }
}
