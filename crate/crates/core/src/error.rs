use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("root bracketing failed for {what} (searched up to {limit:e})")]
    Bracketing { what: &'static str, limit: f64 },

    #[error("quadrature tolerance {requested:e} not met (achieved {achieved:e}) in {what}")]
    ToleranceNotMet {
        what: &'static str,
        requested: f64,
        achieved: f64,
    },

    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("rejection sampler exceeded {0} proposals")]
    RejectionOverrun(usize),

    #[error("overlapping encounters with background particles {first} and {second} at t = {t:e}")]
    OverlappingEvents { first: usize, second: usize, t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical routines, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Bracketing { .. }
                | Error::ToleranceNotMet { .. }
                | Error::StepUnderflow { .. }
                | Error::RejectionOverrun(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
