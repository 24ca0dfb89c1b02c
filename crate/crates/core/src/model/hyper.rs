use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior hyperparameters.
///
/// Gamma priors use the shape/rate convention throughout:
/// `phi^-2 ~ Gamma(a, b)` gives a prior mean variance of `b / a` (three for
/// the defaults) and `kappa^-2 ~ Gamma(zeta, rho)` gives `E[kappa^-2] = 1/9`,
/// i.e. a slab variance near nine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Beta prior on the at-risk probability, first shape.
    pub alpha: f64,
    /// Beta prior on the at-risk probability, second shape.
    pub beta: f64,
    /// Gamma shape of the random-intercept precision.
    pub a: f64,
    /// Gamma rate of the random-intercept precision.
    pub b: f64,
    /// Gamma shape of the slab precision `kappa^-2`.
    pub zeta: f64,
    /// Gamma rate of the slab precision `kappa^-2`.
    pub rho: f64,
    /// B-spline degrees of freedom.
    pub df: usize,
    /// Hill diversity order.
    pub diversity_order: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 10.0,
            a: 3.0,
            b: 9.0,
            zeta: 100.0,
            rho: 900.0,
            df: 4,
            diversity_order: 0.75,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("a", self.a),
            ("b", self.b),
            ("zeta", self.zeta),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "hyperparameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.df < 4 {
            return Err(Error::InsufficientDegreesOfFreedom(self.df));
        }
        if !(0.0..1.0).contains(&self.diversity_order) {
            return Err(Error::InvalidDiversityOrder(self.diversity_order));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let h = Hyperparameters::default();
        assert_eq!((h.a, h.b), (3.0, 9.0));
        assert_eq!((h.alpha, h.beta), (0.01, 10.0));
        assert_eq!((h.zeta, h.rho), (100.0, 900.0));
        assert_eq!(h.df, 4);
        assert_eq!(h.b / h.a, 3.0);
        h.validate().unwrap();
    }

    #[test]
    fn rejects_non_positive() {
        let h = Hyperparameters {
            rho: 0.0,
            ..Default::default()
        };
        assert!(h.validate().is_err());
        let h = Hyperparameters {
            diversity_order: 1.0,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let h: Hyperparameters = toml::from_str("alpha = 1.0\nzeta = 2.5").unwrap();
        assert_eq!(h.alpha, 1.0);
        assert_eq!(h.zeta, 2.5);
        assert_eq!(h.b, 9.0);
    }
}
