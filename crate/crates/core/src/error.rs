use std::fmt;

use thiserror::Error;

use crate::config::ConfigError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("time {t} outside the interval [{start}, {end}]")]
    Range { t: f64, start: f64, end: f64 },

    #[error("solver did not converge after {sweeps} sweeps (last energy {last:?})", last = .energy_trace.last())]
    NonConvergence { sweeps: usize, energy_trace: Vec<f64> },

    #[error("numeric error: {message}")]
    Numeric { message: String, trace: Vec<f64> },

    #[error("coercivity violation: {0}")]
    Coercivity(CoercivityViolation),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("ineligible interface functional: {0}")]
    IneligibleFunctional(String),

    #[error("{}", ConfigErrors(.0))]
    Config(Vec<ConfigError>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            trace: Vec::new(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Mode(_) | Error::Range { .. } => 1,
            Error::Geometry(_) => 2,
            Error::NonConvergence { .. }
            | Error::Numeric { .. }
            | Error::UnsupportedSize(_)
            | Error::IneligibleFunctional(_)
            | Error::Io(_) => 3,
            Error::Coercivity(_) => 4,
        }
    }
}

/// The step size exceeds the bound under which the bilateral per-step form stays coercive.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityViolation {
    pub steps: usize,
    pub min_steps: usize,
    pub h: f64,
    pub h_max: f64,
}

impl fmt::Display for CoercivityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m = {} gives h = {:e} > alpha_min/sigma_min = {:e}; the minimal admissible m is {}",
            self.steps, self.h, self.h_max, self.min_steps
        )
    }
}

struct ConfigErrors<'a>(&'a [ConfigError]);

impl fmt::Display for ConfigErrors<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s)", self.0.len())?;
        for e in self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}
