//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right} ({context})")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("signature violation at sample point {point:?}: {detail}")]
    SignatureViolation { point: Vec<f64>, detail: String },

    #[error("no forward null root for the given spatial covector (discriminant {discriminant:.3e})")]
    NoForwardRoot { discriminant: f64 },

    #[error("every ray of the fan was rejected")]
    EmptyFan,

    #[error("ray still inside the domain at t_max = {t_max}")]
    NoExit { t_max: f64 },

    #[error("forward condition violated: dx0/dt = {value:.3e} at t = {t:.6}")]
    ForwardViolation { t: f64, value: f64 },

    #[error("metric family `{family}` does not provide {what}")]
    UnsupportedFamily {
        family: &'static str,
        what: &'static str,
    },

    #[error("perturbation norm is zero while |G2| = {g2:.3e} > 0")]
    DegenerateNorm { g2: f64 },

    #[error("perturbation norm vanishes on every ray of the fan")]
    AllRaysDegenerate,

    #[error("invalid metric parameters: {0}")]
    InvalidMetric(String),

    #[error("invalid fan: {0}")]
    InvalidFan(String),
}

pub type Result<T> = std::result::Result<T, Error>;
