use std::fmt;

use thiserror::Error;

/// Which body of the system an error refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Body {
    Particle(usize),
    Charge(usize),
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Particle(j) => write!(f, "particle {j}"),
            Body::Charge(a) => write!(f, "charge {a}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A singular kernel was evaluated at zero separation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite coordinate for {body} at t = {time}")]
    IntegrationFailure { body: Body, time: f64 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("oracle integration failed: {0}")]
    Oracle(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
