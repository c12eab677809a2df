//! Checkpoint container parsing, exact element decoding and tensor-name
//! mapping.
//!
//! The container layout is an unsigned 64-bit little-endian header length,
//! a UTF-8 JSON header mapping each tensor name to
//! `{dtype, shape, data_offsets: [begin, end)}` (offsets relative to the data
//! region, optional `__metadata__` string map), then raw little-endian bytes.

mod container;
mod dtype;
mod mapping;

use std::path::PathBuf;

pub use container::{
    open_container, write_container, ContainerIndex, DecodedTensor, NonFinitePolicy, TensorData, TensorRecord,
};
pub use dtype::{decode_bf16, decode_f16, Dtype};
pub use mapping::{map_parameter, Mapped, MappingConfig, ParameterRole, RuleSpec};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("tensors {first:?} and {second:?} have overlapping byte ranges")]
    OverlappingRanges { first: String, second: String },
    #[error("tensor {tensor:?} has unsupported dtype {dtype:?}")]
    UnknownDtype { tensor: String, dtype: String },
    #[error("no tensor named {0:?}")]
    NameNotFound(String),
    #[error("tensor {name:?} is truncated: expected {expected} bytes, {available} available")]
    TruncatedData { name: String, expected: u64, available: u64 },
    #[error("tensor {name:?} holds a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },
    #[error("tensor {0:?} matches no mapping rule")]
    StrictUnmapped(String),
    #[error("invalid mapping rule {pattern:?}: {reason}")]
    InvalidRule { pattern: String, reason: String },
    #[error("invalid mapping config: {0}")]
    InvalidMapping(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;
