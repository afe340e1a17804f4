use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of a formula.
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    /// The amplitude reconstructed from a record is zero, so its phase is undefined.
    #[error("amplitude is zero; phase undefined")]
    UndefinedPhase,

    /// `C = A v + B A*` vanished, so no final phase estimate exists.
    #[error("C vanished; final estimate undefined")]
    UndefinedEstimate,

    /// The conditioned squeeze parameter reached the unit circle.
    #[error("state blow-up at step {step} (v = {v}): |B^S| = {modulus}")]
    StateBlowup { step: usize, v: f64, modulus: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
