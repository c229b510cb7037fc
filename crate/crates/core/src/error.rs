use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contour time out of domain: {0}")]
    Domain(String),

    #[error("order {order} exceeds the connected-diagram cap {cap}")]
    UnsupportedOrder { order: usize, cap: usize },

    /// A grid vertex was read before the sweep produced it.
    #[error("sweep-order violation: entry (row slot {row}, col slot {col}) read before it was computed")]
    SweepOrder { row: usize, col: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
