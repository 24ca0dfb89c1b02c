use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::data::{CoefficientKind, LongitudinalDataset};
use crate::basis::SplineBasis;
use crate::error::{Error, Result};

/// How the coefficient blocks of one taxon are laid out in a flat vector.
///
/// Block `p = 0` is the functional intercept (`D + 1` spline coefficients);
/// block `p >= 1` belongs to covariate `p` and has `D + 1` entries when its
/// coefficient is functional or a single entry when it is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientLayout {
    n_taxa: usize,
    row_len: usize,
    kinds: Vec<CoefficientKind>,
    offsets: Vec<usize>,
}

impl CoefficientLayout {
    pub fn new(n_taxa: usize, row_len: usize, kinds: Vec<CoefficientKind>) -> Self {
        let mut offsets = Vec::with_capacity(kinds.len() + 2);
        offsets.push(0);
        offsets.push(row_len);
        for kind in &kinds {
            let len = match kind {
                CoefficientKind::Functional => row_len,
                CoefficientKind::Constant => 1,
            };
            offsets.push(offsets.last().unwrap() + len);
        }
        Self {
            n_taxa,
            row_len,
            kinds,
            offsets,
        }
    }

    pub fn for_data(data: &LongitudinalDataset, basis: &SplineBasis) -> Self {
        Self::new(data.n_taxa(), basis.row_len(), data.coefficient_kinds())
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    pub fn n_covariates(&self) -> usize {
        self.kinds.len()
    }

    /// Number of blocks per taxon, `P + 1`.
    pub fn n_blocks(&self) -> usize {
        self.kinds.len() + 1
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn kinds(&self) -> &[CoefficientKind] {
        &self.kinds
    }

    /// Length of one taxon's coefficient vector.
    pub fn stride(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_range(&self, p: usize) -> Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub fn block_len(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn is_functional(&self, p: usize) -> bool {
        p == 0 || self.kinds[p - 1] == CoefficientKind::Functional
    }

    /// Positions within block `p` that carry the shrinkage prior. Everything
    /// except the intercept's constant term `beta*_{j00}`.
    pub fn shrunk_range(&self, p: usize) -> Range<usize> {
        if p == 0 {
            1..self.block_len(0)
        } else {
            0..self.block_len(p)
        }
    }

    pub fn shrunk_count(&self, p: usize) -> usize {
        self.shrunk_range(p).len()
    }

    /// Evaluates `beta_jp(t)` from one taxon's coefficients and a basis row.
    pub fn coefficient_at(&self, taxon_coefs: &[f64], p: usize, row: &[f64]) -> f64 {
        let block = &taxon_coefs[self.block_range(p)];
        if self.is_functional(p) {
            block.iter().zip(row).map(|(b, r)| b * r).sum()
        } else {
            block[0]
        }
    }
}

/// Per-record design rows in the same layout as a taxon's coefficients, so
/// that `log gamma_ij(t) = features(t) . beta_j + r_ij`.
#[derive(Debug, Clone)]
pub struct Design {
    stride: usize,
    features: Vec<f64>,
}

impl Design {
    pub fn new(data: &LongitudinalDataset, basis: &SplineBasis, layout: &CoefficientLayout) -> Self {
        let stride = layout.stride();
        let mut features = vec![0.0; data.n_records() * stride];
        let mut row = vec![0.0; basis.row_len()];
        for (k, rec) in data.records().iter().enumerate() {
            basis.evaluate_into(rec.time, &mut row);
            let out = &mut features[k * stride..(k + 1) * stride];
            fill_features(layout, &row, &rec.x, out);
        }
        Self { stride, features }
    }

    pub fn row(&self, record: usize) -> &[f64] {
        &self.features[record * self.stride..(record + 1) * self.stride]
    }
}

/// Writes the design row for covariate values `x` at basis row `row`.
pub fn fill_features(layout: &CoefficientLayout, row: &[f64], x: &[f64], out: &mut [f64]) {
    out[layout.block_range(0)].copy_from_slice(row);
    for p in 1..layout.n_blocks() {
        let range = layout.block_range(p);
        let xp = x[p - 1];
        if layout.is_functional(p) {
            for (o, r) in out[range].iter_mut().zip(row) {
                *o = r * xp;
            }
        } else {
            out[range.start] = xp;
        }
    }
}

/// One full MCMC state.
///
/// The latent gamma variables are stored on the log scale (`log_c`), with
/// `-inf` marking structural zeros; draws with tiny shapes would underflow
/// on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    /// `n_taxa * layout.stride()` spline coefficients, taxon-major.
    pub beta: Vec<f64>,
    /// Random intercepts, `n_individuals * n_taxa`.
    pub r: Vec<f64>,
    /// At-risk indicators, `n_individuals * n_taxa`.
    pub eta: Vec<bool>,
    /// Log latent gamma variables, `n_records * n_taxa`.
    pub log_c: Vec<f64>,
    /// Augmentation variable per record.
    pub u: Vec<f64>,
    /// Local shrinkage `lambda^2`, `n_taxa * (P + 1)`.
    pub lambda2: Vec<f64>,
    pub nu: Vec<f64>,
    /// Global shrinkage `tau^2` per taxon.
    pub tau2: Vec<f64>,
    pub xi: Vec<f64>,
    /// Slab variance `kappa^2` per taxon.
    pub kappa2: Vec<f64>,
    /// Random-intercept variance per taxon.
    pub phi2: Vec<f64>,
}

impl ParameterState {
    /// A zeroed state of the right shape with all pairs at risk, unit
    /// variances and `c = 1`. Mostly useful for tests.
    pub fn zeros(data: &LongitudinalDataset, layout: &CoefficientLayout) -> Self {
        let (n, j) = (data.n_individuals(), data.n_taxa());
        let slots = j * layout.n_blocks();
        Self {
            beta: vec![0.0; j * layout.stride()],
            r: vec![0.0; n * j],
            eta: vec![true; n * j],
            log_c: vec![0.0; data.n_records() * j],
            u: vec![1.0; data.n_records()],
            lambda2: vec![1.0; slots],
            nu: vec![1.0; slots],
            tau2: vec![1.0; j],
            xi: vec![1.0; j],
            kappa2: vec![1.0; j],
            phi2: vec![1.0; j],
        }
    }

    pub fn n_taxa(&self) -> usize {
        self.tau2.len()
    }

    pub fn taxon_coefs<'a>(&'a self, layout: &CoefficientLayout, j: usize) -> &'a [f64] {
        let s = layout.stride();
        &self.beta[j * s..(j + 1) * s]
    }

    pub fn block<'a>(&'a self, layout: &CoefficientLayout, j: usize, p: usize) -> &'a [f64] {
        let base = j * layout.stride();
        let range = layout.block_range(p);
        &self.beta[base + range.start..base + range.end]
    }

    pub fn block_mut<'a>(&'a mut self, layout: &CoefficientLayout, j: usize, p: usize) -> &'a mut [f64] {
        let base = j * layout.stride();
        let range = layout.block_range(p);
        &mut self.beta[base + range.start..base + range.end]
    }

    pub fn c(&self, record: usize, j: usize) -> f64 {
        self.log_c[record * self.n_taxa() + j].exp()
    }

    /// `T_i(t)`, the sum of the latent gamma variables of a record.
    pub fn total(&self, record: usize) -> f64 {
        let j = self.n_taxa();
        self.log_c[record * j..(record + 1) * j]
            .iter()
            .map(|lc| lc.exp())
            .sum()
    }

    /// The record's composition `c / T`.
    pub fn psi(&self, record: usize) -> Vec<f64> {
        let j = self.n_taxa();
        let cs: Vec<f64> = self.log_c[record * j..(record + 1) * j]
            .iter()
            .map(|lc| lc.exp())
            .collect();
        let total: f64 = cs.iter().sum();
        cs.into_iter().map(|c| c / total).collect()
    }

    /// Checks the structural invariants against the data.
    pub fn validate(&self, data: &LongitudinalDataset, layout: &CoefficientLayout) -> Result<()> {
        let (n, j) = (data.n_individuals(), data.n_taxa());
        if self.beta.len() != j * layout.stride()
            || self.r.len() != n * j
            || self.eta.len() != n * j
            || self.log_c.len() != data.n_records() * j
            || self.u.len() != data.n_records()
            || self.lambda2.len() != j * layout.n_blocks()
        {
            return Err(Error::Internal("state dimensions do not match data".into()));
        }
        for i in 0..n {
            for k in 0..j {
                if !self.eta[i * j + k] && !data.all_zero(i, k) {
                    return Err(Error::StructuralZeroWithCounts {
                        individual: i,
                        taxon: k,
                    });
                }
            }
        }
        for (rec_idx, rec) in data.records().iter().enumerate() {
            for k in 0..j {
                let lc = self.log_c[rec_idx * j + k];
                let at_risk = self.eta[rec.individual * j + k];
                if at_risk != lc.is_finite() || lc == f64::INFINITY {
                    return Err(Error::Internal(format!(
                        "latent c inconsistent with eta at record {rec_idx}, taxon {k}"
                    )));
                }
            }
            if !(self.u[rec_idx] > 0.0 && self.u[rec_idx].is_finite()) {
                return Err(Error::Internal(format!("u not positive at record {rec_idx}")));
            }
        }
        let positive = self
            .lambda2
            .iter()
            .chain(&self.nu)
            .chain(&self.tau2)
            .chain(&self.xi)
            .chain(&self.kappa2)
            .chain(&self.phi2);
        if positive.into_iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Internal("variance parameter not positive".into()));
        }
        Ok(())
    }
}
