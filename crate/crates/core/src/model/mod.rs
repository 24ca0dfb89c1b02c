//! Domain types and density kernels of the zero-inflated
//! Dirichlet-multinomial concentration regression.

mod data;
mod density;
mod hyper;
mod profile;
mod state;

pub use data::{CoefficientKind, CovariateInfo, LongitudinalDataset, Record, Scaling};
pub(crate) use data::column_moments;
pub use density::{
    augmented_log_joint, log_beta_binomial_column, log_block_prior, log_concentration,
    log_concentration_term, log_gamma_pdf, log_half_cauchy_aux, log_inv_gamma_pdf, log_joint_terms,
    log_normal, log_variance_prior, shrinkage_variance, LogJointTerms,
};
pub use hyper::Hyperparameters;
pub use profile::{CovariateProfile, ProfileCurve};
pub use state::{fill_features, CoefficientLayout, Design, ParameterState};
