use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient degrees of freedom: cubic basis needs D >= 4, got {0}")]
    InsufficientDegreesOfFreedom(usize),

    #[error("invalid spline basis: {0}")]
    InvalidBasis(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("structural zero contradicts positive count (individual {individual}, taxon {taxon})")]
    StructuralZeroWithCounts { individual: usize, taxon: usize },

    #[error("non-finite log-concentration for record {record}, taxon {taxon}")]
    NonFiniteConcentration { record: usize, taxon: usize },

    #[error("record {record} has positive counts but no at-risk taxa")]
    EmptyAtRiskSet { record: usize },

    #[error("chain diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("cached log-concentrations drifted by {drift:e} at iteration {iteration}")]
    CacheDrift { iteration: usize, drift: f64 },

    #[error("internal sampler error: {0}")]
    Internal(String),

    #[error("invalid diversity order l = {0}: need 0 <= l < 1 (l = 1 always gives Div = J)")]
    InvalidDiversityOrder(f64),

    #[error("unsupported chain file format version {0}")]
    UnsupportedFormat(u32),

    #[error("malformed chain file: {0}")]
    MalformedChain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than by sampling.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InsufficientDegreesOfFreedom(_)
                | Error::InvalidBasis(_)
                | Error::InvalidData(_)
                | Error::InvalidConfig(_)
                | Error::InvalidDiversityOrder(_)
                | Error::UnsupportedFormat(_)
                | Error::MalformedChain(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Toml(_)
        )
    }

    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteConcentration { .. } | Error::CacheDrift { .. }
        )
    }
}
