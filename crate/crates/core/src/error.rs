use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::interval::IntervalError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error("{context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error("declared gradient of `{name}` is empty at x = {x:?}, t = {t}")]
    EmptyGradient { name: String, x: Vec<f64>, t: f64 },
    #[error("`{name}` is time-independent but its gradient has time axis {axis}")]
    TimeAxisNotZero { name: String, axis: String },
    #[error("`{0}` must be flagged regular")]
    NotRegular(String),
    #[error("F is empty at x = {x:?}, t = {t}")]
    EmptyInclusion { x: Vec<f64>, t: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for malformed input (bad JSON, unknown keys, DSL syntax).
    pub fn is_parse_error(&self) -> bool {
        matches!(self, Error::Json(_) | Error::Parse { .. })
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn eval(context: impl Into<String>, source: EvalError) -> Self {
        Error::Eval {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, source: ParseError) -> Self {
        Error::Parse {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
