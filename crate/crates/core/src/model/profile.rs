use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of one covariate as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileCurve {
    Constant(f64),
    /// Piecewise-linear through the knots, held flat outside them.
    Linear { times: Vec<f64>, values: Vec<f64> },
}

impl ProfileCurve {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            ProfileCurve::Constant(v) => *v,
            ProfileCurve::Linear { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let k = times.partition_point(|&s| s <= t);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (t - t0) / (t1 - t0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }
}

/// A covariate vector `x(t)` at which population-level quantities are
/// evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    #[serde(default)]
    pub label: String,
    pub curves: Vec<ProfileCurve>,
}

impl CovariateProfile {
    /// The reference profile `x(t) = 0`: mean values of centered covariates
    /// and reference levels of categorical ones.
    pub fn reference(n_covariates: usize) -> Self {
        Self {
            label: "reference".into(),
            curves: vec![ProfileCurve::Constant(0.0); n_covariates],
        }
    }

    pub fn constant(label: impl Into<String>, values: &[f64]) -> Self {
        Self {
            label: label.into(),
            curves: values.iter().map(|&v| ProfileCurve::Constant(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.curves.len() != n_covariates {
            return Err(Error::InvalidConfig(format!(
                "profile '{}' has {} covariates, model has {n_covariates}",
                self.label,
                self.curves.len()
            )));
        }
        for curve in &self.curves {
            match curve {
                ProfileCurve::Constant(v) if !v.is_finite() => {
                    return Err(Error::InvalidConfig("non-finite profile value".into()));
                }
                ProfileCurve::Linear { times, values } => {
                    if times.is_empty()
                        || times.len() != values.len()
                        || times.windows(2).any(|w| w[0] >= w[1])
                        || values.iter().any(|v| !v.is_finite())
                    {
                        return Err(Error::InvalidConfig(
                            "time-varying profile needs sorted, distinct times and finite values"
                                .into(),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        self.curves.iter().map(|c| c.at(t)).collect()
    }
}
