//! Shared fixtures for the benchmarks.

use funczidm::simgen::{generate, SimulationConfig};
use funczidm::{LongitudinalDataset, SplineBasis};

/// A simulated dataset with `n_taxa` taxa and `n_covariates` covariates and
/// its spline basis.
pub fn fixture(n_taxa: usize, n_covariates: usize, seed: u64) -> (LongitudinalDataset, SplineBasis) {
    let config = SimulationConfig {
        n_taxa,
        n_covariates,
        ..SimulationConfig::default()
    };
    let (data, _) = generate(&config, seed).expect("valid simulation design");
    let basis = SplineBasis::build(&data.times(), 4).expect("valid basis");
    (data, basis)
}
