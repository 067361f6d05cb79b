use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor operations, models, losses and the data pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        $crate::error::Error::Shape { op: $op, detail: alloc::format!($($arg)*) }
    };
}

macro_rules! arg_err {
    ($op:expr, $($arg:tt)*) => {
        $crate::error::Error::InvalidArgument { op: $op, detail: alloc::format!($($arg)*) }
    };
}

pub(crate) use arg_err;
pub(crate) use shape_err;
