use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which move families a sweep runs. Everything is on for real fits; tests
/// switch families off to isolate one conditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveSet {
    pub u: bool,
    pub c: bool,
    /// Blocked redraw of each record's total `T` and `u` given the composition.
    pub rescale: bool,
    pub eta: bool,
    pub beta: bool,
    /// Joint shift of `beta*_{j00}` against the random intercepts of taxon `j`.
    pub recenter: bool,
    pub r: bool,
    pub horseshoe: bool,
    pub kappa: bool,
    pub phi: bool,
}

impl Default for MoveSet {
    fn default() -> Self {
        Self::all()
    }
}

impl MoveSet {
    pub fn all() -> Self {
        Self {
            u: true,
            c: true,
            rescale: true,
            eta: true,
            beta: true,
            recenter: true,
            r: true,
            horseshoe: true,
            kappa: true,
            phi: true,
        }
    }

    pub fn none() -> Self {
        Self {
            u: false,
            c: false,
            rescale: false,
            eta: false,
            beta: false,
            recenter: false,
            r: false,
            horseshoe: false,
            kappa: false,
            phi: false,
        }
    }

    /// Only the latent-variable moves (`u`, `c`, `T` rescale, `eta`).
    pub fn latents() -> Self {
        Self {
            u: true,
            c: true,
            rescale: true,
            eta: true,
            ..Self::none()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Coefficients start from `Uniform(-beta_range, beta_range)`.
    pub beta_range: f64,
    /// Random intercepts start from `Uniform(-r_range, r_range)`.
    pub r_range: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            beta_range: 0.75,
            r_range: 0.05,
        }
    }
}

/// MCMC run settings. Defaults reproduce the full-length reference run
/// (85k iterations, 45k burn-in, thin 40, four chains); [`SamplerConfig::desk`]
/// is the shorter preset used for simulation studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    /// Iterations between proposal-scale adaptations during burn-in.
    pub adapt_window: usize,
    /// Target acceptance of multivariate coefficient blocks.
    pub target_accept_block: f64,
    /// Target acceptance of scalar random-walk moves.
    pub target_accept_scalar: f64,
    /// Learn the proposal covariance of each coefficient block in burn-in.
    pub adapt_covariance: bool,
    pub init: InitConfig,
    /// Initial random-walk scale of coefficient blocks.
    pub initial_block_scale: f64,
    /// Initial random-walk scale of scalar moves.
    pub initial_scalar_scale: f64,
    /// Keep `r` and `eta` in every retained draw (needed for predictive
    /// checks; large for many taxa).
    pub store_subject_params: bool,
    /// Abort when any `|beta*|` exceeds this value.
    pub divergence_threshold: f64,
    /// Iterations between full cache recomputations.
    pub checkpoint_every: usize,
    /// Print progress to stderr every this many iterations; 0 disables.
    pub progress_every: usize,
    pub moves: MoveSet,
    /// Drop all data terms from the MH ratios (prior-recovery checks).
    pub mute_likelihood: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 85_000,
            burn_in: 45_000,
            thin: 40,
            seed: 1,
            n_chains: 4,
            adapt_window: 50,
            target_accept_block: 0.3,
            target_accept_scalar: 0.44,
            adapt_covariance: true,
            init: InitConfig::default(),
            initial_block_scale: 0.05,
            initial_scalar_scale: 0.1,
            store_subject_params: true,
            divergence_threshold: 50.0,
            checkpoint_every: 1000,
            progress_every: 0,
            moves: MoveSet::all(),
            mute_likelihood: false,
        }
    }
}

impl SamplerConfig {
    /// 15k iterations, 5k burn-in, thin 10, one chain.
    pub fn desk() -> Self {
        Self {
            iterations: 15_000,
            burn_in: 5_000,
            thin: 10,
            n_chains: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations > 0 && self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::InvalidConfig("n_chains must be at least 1".into()));
        }
        if self.adapt_window == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "adapt_window and checkpoint_every must be positive".into(),
            ));
        }
        for (name, v) in [
            ("target_accept_block", self.target_accept_block),
            ("target_accept_scalar", self.target_accept_scalar),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1)")));
            }
        }
        if !(self.initial_block_scale > 0.0 && self.initial_scalar_scale > 0.0) {
            return Err(Error::InvalidConfig("initial scales must be positive".into()));
        }
        Ok(())
    }

    /// Number of retained draws, `floor((iterations - burn_in) / thin)`.
    pub fn n_retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }

    /// Whether iteration `it` (zero-based) is retained.
    pub fn is_retained(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retained_count_matches_rule() {
        let c = SamplerConfig::default();
        assert_eq!(c.n_retained(), 1000);
        let c = SamplerConfig {
            iterations: 107,
            burn_in: 10,
            thin: 4,
            ..SamplerConfig::default()
        };
        let kept = (0..c.iterations).filter(|&it| c.is_retained(it)).count();
        assert_eq!(kept, c.n_retained());
        assert_eq!(kept, 24);
    }

    #[test]
    fn validation_catches_bad_settings() {
        let bad = SamplerConfig {
            burn_in: 100,
            iterations: 100,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            thin: 0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        SamplerConfig {
            iterations: 0,
            burn_in: 0,
            ..SamplerConfig::default()
        }
        .validate()
        .unwrap();
    }
}
