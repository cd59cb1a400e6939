use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hurwitz: eigenvalue with real part {max_real_part:.6e}")]
    NotHurwitz { max_real_part: f64 },

    #[error("matrix is not symmetric: max |P - P^T| = {0:.3e}")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite: lambda_min = {0:.6e}")]
    NotPositiveDefinite(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A model or scenario violates one of its structural requirements.
    #[error("configuration error: {0}")]
    Config(String),

    /// The fast-subsystem matrix lost Hurwitz stability somewhere on the gain grid.
    #[error("fast subsystem matrix is not Hurwitz at g = {gain}: max real part {max_real_part:.6e}")]
    FastSubsystemUnstable { gain: f64, max_real_part: f64 },

    #[error("sampled bound for {quantity} does not settle (half budget {half:.6e}, full budget {full:.6e})")]
    UnboundedEstimate {
        quantity: &'static str,
        half: f64,
        full: f64,
    },
}
