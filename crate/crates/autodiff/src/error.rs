use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced or supplied in `{0}`")]
    NonFinite(&'static str),
    #[error("argument of `{0}` is outside its domain")]
    Domain(&'static str),
    #[error("operation `{0}` has no forward-mode tangent rule")]
    UnsupportedOp(&'static str),
    #[error("loss must be a finite 1x1 scalar, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("gradients already populated for parameter set `{0}`; reset before a second backward pass")]
    DoubleAccumulation(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
