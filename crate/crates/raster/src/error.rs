use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid render parameter: {0}")]
    InvalidParameter(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Geometry(#[from] hsurf_geometry::GeometryError),
    #[error(transparent)]
    Autodiff(#[from] hsurf_autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, RasterError>;
