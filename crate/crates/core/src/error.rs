use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("refractive index {0} must exceed 1")]
    DegenerateIndex(f64),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("mirror gap would become negative ({0} mm)")]
    NegativeGap(f64),
    #[error("optimisation grid is empty")]
    EmptyGrid,
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
