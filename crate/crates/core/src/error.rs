use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{material}: wavelength {wavelength_nm} nm outside valid range [{min_nm}, {max_nm}] nm")]
    WavelengthOutOfRange {
        material: String,
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frequency grid too narrow: edge magnitude {edge_ratio:.3e} of peak exceeds {threshold:.1e}")]
    GridTruncation { edge_ratio: f64, threshold: f64 },

    #[error("amplitudes are defined on different frequency grids")]
    GridMismatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("preparation infeasible: |overlap| = {overlap:.4} is below the required {required}")]
    Infeasible { overlap: f64, required: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("material table: {0}")]
    MaterialTable(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
