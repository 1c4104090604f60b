use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("batch-size error: train-mode batch norm needs at least 2 rows, got {0}")]
    BatchSize(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,
}

/// Shorthand for building a dimension error with `format!` syntax.
macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
