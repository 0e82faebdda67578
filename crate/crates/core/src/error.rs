use thiserror::Error;

/// Why the protocol refuses to produce a key for the given data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// `E_{i0} <= N` or `E_{i0+k} <= N`: not enough sifted bits to fill the code and keep check bits.
    InsufficientCheckBits,
    /// The final key would be shorter than the configured minimum.
    BelowMinimum,
}

impl AbortReason {
    /// Stable machine-readable code used in CSV output.
    pub fn code(self) -> &'static str {
        match self {
            AbortReason::InsufficientCheckBits => "insufficient-check-bits",
            AbortReason::BelowMinimum => "below-minimum",
        }
    }
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("protocol aborted: {0}")]
    Abort(AbortReason),

    #[error("matrix block of size {size} is singular")]
    Singular { size: usize },

    #[error("matrix block of size {size} is ill-conditioned (condition number {condition:.3e} > {ceiling:.3e})")]
    IllConditioned {
        size: usize,
        condition: f64,
        ceiling: f64,
    },

    #[error("series for Omega_{l} did not converge within {terms} terms")]
    SeriesDivergence { l: usize, terms: usize },

    #[error("expansion coefficient {what} is not positive ({value:e})")]
    NonPositiveCoefficient { what: String, value: f64 },

    #[error("division by zero: {0}")]
    ZeroDenominator(String),

    #[error("likelihood is degenerate: term {term} has zero model probability with count {count}")]
    DegenerateLikelihood { term: String, count: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
