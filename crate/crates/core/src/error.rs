// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },

    /// A reservation would push the size past what the structure can ever hold.
    #[error("capacity exhausted: requested {requested} elements, at most {available} available")]
    CapacityExhausted { requested: usize, available: usize },

    #[error("bucket {bucket} outside the bucket table (max {max})")]
    BucketOutOfRange { bucket: usize, max: usize },

    #[error("failed to allocate {elements} elements")]
    Alloc { elements: usize },

    /// Some shards failed during a parallel insert; nothing was committed.
    #[error("insert failed on shards {failed:?}; shards {succeeded:?} hold uncommitted elements")]
    PartialInsert { succeeded: Vec<usize>, failed: Vec<(usize, Box<Error>)> },

    #[error("{count} element operations failed during traversal; first: {first}")]
    Traversal { count: usize, first: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv output: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Csv(err.to_string())
    }
}
