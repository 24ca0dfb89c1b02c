use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::SamplerConfig;
use crate::basis::SplineBasis;
use crate::model::{CoefficientLayout, Hyperparameters};

/// Current chain-file format version.
pub const FORMAT_VERSION: u32 = 1;

/// Move order within one sweep, recorded in chain metadata.
pub const SWEEP_ORDER: [&str; 10] = [
    "u", "c", "rescale", "eta", "beta", "recenter", "r", "horseshoe", "kappa", "phi",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyRate {
    pub accepted: u64,
    pub proposed: u64,
}

impl FamilyRate {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance counts per move family.
pub type AcceptanceSummary = BTreeMap<String, FamilyRate>;

/// Everything needed to interpret a chain without the original data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub format_version: u32,
    pub chain: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub hyper: Hyperparameters,
    pub basis: SplineBasis,
    pub knot_rule: String,
    pub layout: CoefficientLayout,
    pub n_individuals: usize,
    pub n_records: usize,
    pub taxon_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub individual_ids: Vec<String>,
    pub subject_params: bool,
    pub sweep_order: Vec<String>,
    /// Post-burn-in acceptance (whole run when there is no burn-in).
    pub acceptance: AcceptanceSummary,
    /// Final, frozen proposal scales summarized per family (median).
    pub proposal_scales: BTreeMap<String, f64>,
    pub elapsed_seconds: f64,
}

impl ChainMetadata {
    pub fn n_taxa(&self) -> usize {
        self.layout.n_taxa()
    }

    pub fn n_covariates(&self) -> usize {
        self.layout.n_covariates()
    }
}

/// One retained MCMC state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub log_joint: f64,
    /// Spline coefficients, taxon-major in the metadata layout.
    pub beta: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub tau2: Vec<f64>,
    pub kappa2: Vec<f64>,
    pub phi2: Vec<f64>,
    pub r: Option<Vec<f64>>,
    pub eta: Option<Vec<bool>>,
}

impl Draw {
    pub fn taxon_coefs<'a>(&'a self, layout: &CoefficientLayout, j: usize) -> &'a [f64] {
        let s = layout.stride();
        &self.beta[j * s..(j + 1) * s]
    }
}

/// Thinned output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub meta: ChainMetadata,
    pub draws: Vec<Draw>,
    /// Posterior mean of the subject-level expected composition
    /// `gamma_ij(t) / sum_k gamma_ik(t)` per record, `n_records * n_taxa`.
    pub subject_ra_mean: Vec<f64>,
    /// Posterior mean of `eta`, `n_individuals * n_taxa`.
    pub eta_mean: Vec<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.meta.layout
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.meta.basis
    }

    /// Pools several chains of the same model into one set of draws. The
    /// metadata of the first chain is kept; record-level means are averaged
    /// with weights proportional to each chain's draw count.
    pub fn pool(chains: Vec<PosteriorDraws>) -> Option<PosteriorDraws> {
        let mut iter = chains.into_iter();
        let mut first = iter.next()?;
        let mut weight = first.draws.len() as f64;
        for other in iter {
            let w = other.draws.len() as f64;
            if weight + w > 0.0 {
                for (a, b) in first.subject_ra_mean.iter_mut().zip(&other.subject_ra_mean) {
                    *a = (*a * weight + b * w) / (weight + w);
                }
                for (a, b) in first.eta_mean.iter_mut().zip(&other.eta_mean) {
                    *a = (*a * weight + b * w) / (weight + w);
                }
            }
            weight += w;
            first.draws.extend(other.draws);
        }
        Some(first)
    }
}
