use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] hsurf_autodiff::AutodiffError),
    #[error(transparent)]
    Geometry(#[from] hsurf_geometry::GeometryError),
    #[error(transparent)]
    Raster(#[from] hsurf_raster::RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFiniteLoss { step: usize, diagnostic: String },
}
