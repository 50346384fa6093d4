use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    InvalidIndex {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty point set")]
    EmptyPoints,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad sample cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
