//! Functional concurrent zero-inflated Dirichlet-multinomial (FunC-ZIDM)
//! regression for longitudinal compositional counts.
//!
//! The crate is organized bottom-up:
//!
//! * [`basis`]: cubic B-spline basis for the time-varying coefficients.
//! * [`model`]: data, parameter state, and the augmented log-joint.
//! * [`sampler`]: the Metropolis-Hastings-within-Gibbs kernel and chain I/O.
//! * [`inference`]: relative abundance, multiplicative differences, Hill
//!   diversity, credible bands and posterior predictive checks.
//! * [`simgen`]: the synthetic-data generator and scoring metrics.
//! * [`ingest`]: CSV ingestion and run configuration.

pub mod basis;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod model;
pub mod sampler;
pub mod simgen;

pub use basis::SplineBasis;
pub use error::{Error, Result};
pub use model::{
    CoefficientKind, CoefficientLayout, CovariateInfo, CovariateProfile, Hyperparameters,
    LongitudinalDataset, ParameterState, Record,
};
pub use sampler::{run_chain, Draw, PosteriorDraws, SamplerConfig};
