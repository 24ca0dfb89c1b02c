//! Burn-in proposal adaptation.
//!
//! Every `adapt_window` burn-in iterations each random-walk scale is
//! multiplied by `exp(acceptance - target)`. Coefficient blocks additionally
//! learn a proposal covariance from their burn-in trajectory. Everything is
//! frozen once burn-in ends.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarProposal {
    pub scale: f64,
    #[serde(skip)]
    accepted: u32,
    #[serde(skip)]
    proposed: u32,
}

impl ScalarProposal {
    pub fn new(scale: f64) -> Self {
        Self {
            scale,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u32::from(accepted);
    }

    /// Window acceptance rate, if anything was proposed.
    pub fn window_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| f64::from(self.accepted) / f64::from(self.proposed))
    }

    pub fn adapt(&mut self, target: f64) {
        if let Some(rate) = self.window_rate() {
            self.scale = rescale(self.scale, rate, target);
        }
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// `scale * exp(rate - target)`.
pub fn rescale(scale: f64, rate: f64, target: f64) -> f64 {
    scale * (rate - target).exp()
}

/// Random-walk proposal for a coefficient block: `scale * L * eps` with `L`
/// either the identity or the Cholesky factor of the learned covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockProposal {
    pub scale: ScalarProposal,
    pub chol: Option<Vec<f64>>,
    #[serde(skip)]
    stats: Option<RunningMoments>,
}

impl BlockProposal {
    pub fn new(scale: f64) -> Self {
        Self {
            scale: ScalarProposal::new(scale),
            chol: None,
            stats: None,
        }
    }

    pub fn dim_hint(&self) -> Option<usize> {
        self.stats.as_ref().map(|s| s.mean.len())
    }

    /// Writes the proposal increment for standard normals `eps`.
    pub fn step(&self, eps: &[f64], out: &mut [f64]) {
        let d = eps.len();
        let s = self.scale.scale;
        match &self.chol {
            None => out.iter_mut().zip(eps).for_each(|(o, e)| *o = s * e),
            Some(l) => {
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..=r {
                        acc += l[r * d + c] * eps[c];
                    }
                    out[r] = s * acc;
                }
            }
        }
    }

    pub fn observe(&mut self, value: &[f64]) {
        self.stats
            .get_or_insert_with(|| RunningMoments::new(value.len()))
            .push(value);
    }

    /// Refreshes the covariance factor from the observed trajectory once
    /// enough samples are available. Returns true on the first switch from
    /// the identity.
    pub fn refresh_covariance(&mut self) -> bool {
        let Some(stats) = &self.stats else {
            return false;
        };
        let d = stats.mean.len();
        if d < 2 || stats.n < (10 * d).max(50) {
            return false;
        }
        let mut cov = stats.covariance();
        let avg_var = (0..d).map(|k| cov[k * d + k]).sum::<f64>() / d as f64;
        if !(avg_var > 0.0 && avg_var.is_finite()) {
            return false;
        }
        for k in 0..d {
            cov[k * d + k] += 1e-6 * avg_var + 1e-12;
        }
        match cholesky(&cov, d) {
            Some(l) => {
                let first = self.chol.is_none();
                self.chol = Some(l);
                if first {
                    self.scale.scale = 2.38 / (d as f64).sqrt();
                }
                first
            }
            None => false,
        }
    }

    pub fn clear_stats(&mut self) {
        self.stats = None;
    }
}

/// Welford accumulator for a mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
struct RunningMoments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for r in 0..d {
            let after = x[r] - self.mean[r];
            for c in 0..d {
                self.m2[r * d + c] += after * delta[c];
            }
        }
    }

    fn covariance(&self) -> Vec<f64> {
        let denom = (self.n - 1) as f64;
        self.m2.iter().map(|v| v / denom).collect()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite `d x d`
/// row-major matrix.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..=r {
            let mut sum = a[r * d + c];
            for k in 0..c {
                sum -= l[r * d + k] * l[c * d + k];
            }
            if r == c {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[r * d + r] = sum.sqrt();
            } else {
                l[r * d + c] = sum / l[c * d + c];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_target_keeps_scale() {
        let mut p = ScalarProposal::new(0.7);
        for k in 0..100 {
            p.record(k % 100 < 44);
        }
        p.adapt(0.44);
        assert!((p.scale - 0.7).abs() < 1e-15);
    }

    #[test]
    fn persistent_acceptance_grows_scale() {
        let mut p = ScalarProposal::new(0.1);
        let mut last = p.scale;
        for _ in 0..5 {
            for _ in 0..20 {
                p.record(true);
            }
            p.adapt(0.3);
            assert!(p.scale > last);
            last = p.scale;
        }
    }

    #[test]
    fn empty_window_is_a_no_op() {
        let mut p = ScalarProposal::new(0.2);
        p.adapt(0.44);
        assert_eq!(p.scale, 0.2);
    }

    #[test]
    fn cholesky_reconstructs_matrix() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| l[r * 3 + k] * l[c * 3 + k]).sum();
                assert!((v - a[r * 3 + c]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn learned_covariance_tracks_samples() {
        let mut p = BlockProposal::new(0.1);
        // x2 = 2 x1 exactly plus small independent jitter
        for k in 0..500 {
            let a = ((k * 7919) % 1000) as f64 / 1000.0 - 0.5;
            let b = ((k * 104_729) % 997) as f64 / 997.0 - 0.5;
            p.observe(&[a, 2.0 * a + 0.01 * b]);
        }
        assert!(p.refresh_covariance());
        let l = p.chol.as_ref().unwrap();
        // implied correlation close to one
        let var1 = l[0] * l[0];
        let cov12 = l[2] * l[0];
        let var2 = l[2] * l[2] + l[3] * l[3];
        assert!(cov12 / (var1 * var2).sqrt() > 0.99);
        assert!((p.scale.scale - 2.38 / 2f64.sqrt()).abs() < 1e-12);
    }
}
