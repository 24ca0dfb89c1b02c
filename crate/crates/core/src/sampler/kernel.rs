//! The Metropolis-Hastings-within-Gibbs kernel.
//!
//! Per record the multinomial likelihood is augmented with `u`, so that
//!
//! * `u | c ~ Gamma(z., T)`,
//! * `c_j | u ~ Gamma(z_j + gamma_j, 1 + u)` for at-risk taxa,
//! * `(T, u) | c / T`: `T ~ Gamma(sum gamma, 1)` then `u ~ Gamma(z., T)`.
//!
//! Coefficient blocks, random intercepts, at-risk flips and the slab
//! variance use Metropolis-Hastings; the horseshoe scales use the
//! unregularized inverse-gamma conditionals as independence proposals with a
//! regularization correction, followed by a log-scale random walk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use super::adapt::{BlockProposal, ScalarProposal};
use super::config::SamplerConfig;
use super::draws::{AcceptanceSummary, Draw, FamilyRate};
use super::random::{sample_gamma, sample_inv_gamma, sample_log_gamma};
use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{
    log_beta_binomial_column, log_block_prior, log_half_cauchy_aux, log_normal,
    log_variance_prior, CoefficientLayout, Design, Hyperparameters,
    LongitudinalDataset, ParameterState,
};

/// Tolerated drift between incrementally updated and recomputed caches.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Proposal scales of every random-walk family.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    /// One per (taxon, block).
    pub beta: Vec<BlockProposal>,
    /// One per (individual, taxon).
    pub r: Vec<ScalarProposal>,
    pub kappa: Vec<ScalarProposal>,
    /// Log-scale walks for `lambda^2`, one per (taxon, block).
    pub lambda: Vec<ScalarProposal>,
    pub tau: Vec<ScalarProposal>,
}

impl Proposals {
    pub fn new(data: &LongitudinalDataset, layout: &CoefficientLayout, config: &SamplerConfig) -> Self {
        let (n, j) = (data.n_individuals(), data.n_taxa());
        let blocks = layout.n_blocks();
        Self {
            beta: (0..j * blocks)
                .map(|_| BlockProposal::new(config.initial_block_scale))
                .collect(),
            r: vec![ScalarProposal::new(config.initial_scalar_scale); n * j],
            kappa: vec![ScalarProposal::new(config.initial_scalar_scale); j],
            lambda: vec![ScalarProposal::new(1.0); j * blocks],
            tau: vec![ScalarProposal::new(1.0); j],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Ledger {
    pub eta_add: FamilyRate,
    pub eta_remove: FamilyRate,
    pub beta: FamilyRate,
    pub r: FamilyRate,
    pub kappa: FamilyRate,
    pub lambda_indep: FamilyRate,
    pub lambda_walk: FamilyRate,
    pub tau_indep: FamilyRate,
    pub tau_walk: FamilyRate,
}

impl Ledger {
    pub fn summary(&self) -> AcceptanceSummary {
        [
            ("eta_add", self.eta_add),
            ("eta_remove", self.eta_remove),
            ("beta", self.beta),
            ("r", self.r),
            ("kappa", self.kappa),
            ("lambda_indep", self.lambda_indep),
            ("lambda_walk", self.lambda_walk),
            ("tau_indep", self.tau_indep),
            ("tau_walk", self.tau_walk),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Metropolis acceptance test on the log scale.
fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// One chain: the current state, its caches and the random stream.
pub struct Chain<'a> {
    data: &'a LongitudinalDataset,
    hyper: &'a Hyperparameters,
    config: &'a SamplerConfig,
    layout: CoefficientLayout,
    design: Design,
    state: ParameterState,
    /// `log gamma` for every (record, taxon), at risk or not.
    log_gamma: Vec<f64>,
    /// `ln Gamma(gamma)` for at-risk cells.
    lgamma: Vec<f64>,
    /// `T` per record.
    totals: Vec<f64>,
    depth: Vec<f64>,
    eligible: Vec<(usize, usize)>,
    at_risk: Vec<usize>,
    pub(crate) proposals: Proposals,
    pub(crate) ledger: Ledger,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Chain<'a> {
    /// Draws an initial state and builds the chain.
    pub fn initialize(
        data: &'a LongitudinalDataset,
        hyper: &'a Hyperparameters,
        basis: &SplineBasis,
        config: &'a SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = CoefficientLayout::for_data(data, basis);
        let design = Design::new(data, basis, &layout);
        let state = initial_state(data, hyper, &layout, &design, config, &mut rng);
        let proposals = Proposals::new(data, &layout, config);
        Self::from_parts(data, hyper, basis, config, state, proposals, rng)
    }

    /// Builds a chain around an existing state. The latents `c` and `u` are
    /// kept; caches are recomputed.
    pub fn from_parts(
        data: &'a LongitudinalDataset,
        hyper: &'a Hyperparameters,
        basis: &SplineBasis,
        config: &'a SamplerConfig,
        state: ParameterState,
        proposals: Proposals,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        let layout = CoefficientLayout::for_data(data, basis);
        state.validate(data, &layout)?;
        let design = Design::new(data, basis, &layout);
        let jn = data.n_taxa();
        let mut eligible = Vec::new();
        for i in 0..data.n_individuals() {
            for j in 0..jn {
                if data.all_zero(i, j) {
                    eligible.push((i, j));
                }
            }
        }
        let mut chain = Self {
            data,
            hyper,
            config,
            layout,
            design,
            log_gamma: vec![0.0; data.n_records() * jn],
            lgamma: vec![0.0; data.n_records() * jn],
            totals: vec![0.0; data.n_records()],
            depth: data.records().iter().map(|r| r.total() as f64).collect(),
            eligible,
            at_risk: vec![0; jn],
            state,
            proposals,
            ledger: Ledger::default(),
            rng,
            iteration: 0,
        };
        chain.refresh_caches(false)?;
        Ok(chain)
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn into_parts(self) -> (ParameterState, Proposals, ChaCha8Rng) {
        (self.state, self.proposals, self.rng)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn n_taxa(&self) -> usize {
        self.data.n_taxa()
    }

    fn linear_predictor(&self, k: usize, j: usize) -> f64 {
        let coefs = self.state.taxon_coefs(&self.layout, j);
        let feats = self.design.row(k);
        let dot: f64 = feats.iter().zip(coefs).map(|(f, b)| f * b).sum();
        dot + self.state.r[self.data.record(k).individual * self.n_taxa() + j]
    }

    /// Recomputes every cache from the state. With `check`, fails when the
    /// incrementally maintained log-concentrations drifted too far.
    pub fn refresh_caches(&mut self, check: bool) -> Result<()> {
        let jn = self.n_taxa();
        let mut drift: f64 = 0.0;
        for k in 0..self.data.n_records() {
            let ind = self.data.record(k).individual;
            let mut total = 0.0;
            for j in 0..jn {
                let lg = self.linear_predictor(k, j);
                if !lg.is_finite() {
                    return Err(Error::NonFiniteConcentration { record: k, taxon: j });
                }
                let cell = k * jn + j;
                drift = drift.max((lg - self.log_gamma[cell]).abs());
                self.log_gamma[cell] = lg;
                if self.state.eta[ind * jn + j] {
                    self.lgamma[cell] = ln_gamma(lg.exp());
                    total += self.state.log_c[cell].exp();
                } else {
                    self.lgamma[cell] = 0.0;
                }
            }
            self.totals[k] = total;
        }
        for j in 0..jn {
            self.at_risk[j] = (0..self.data.n_individuals())
                .filter(|&i| self.state.eta[i * jn + j])
                .count();
        }
        if check && drift > DRIFT_TOLERANCE {
            return Err(Error::CacheDrift {
                iteration: self.iteration,
                drift,
            });
        }
        Ok(())
    }

    /// Log-joint from the caches; equals
    /// [`crate::model::augmented_log_joint`] up to rounding.
    pub fn log_joint(&self) -> f64 {
        let jn = self.n_taxa();
        let n = self.data.n_individuals();
        let blocks = self.layout.n_blocks();
        let mut lp = 0.0;
        for (k, rec) in self.data.records().iter().enumerate() {
            let u = self.state.u[k];
            lp += (self.depth[k] - 1.0) * u.ln() - u * self.totals[k];
            for j in 0..jn {
                if !self.state.eta[rec.individual * jn + j] {
                    continue;
                }
                let cell = k * jn + j;
                let lc = self.state.log_c[cell];
                let g = self.log_gamma[cell].exp();
                lp += f64::from(rec.counts[j]) * lc + (g - 1.0) * lc - lc.exp() - self.lgamma[cell];
            }
        }
        for j in 0..jn {
            lp += log_beta_binomial_column(self.at_risk[j], n, self.hyper.alpha, self.hyper.beta);
            for p in 0..blocks {
                let slot = j * blocks + p;
                lp += log_block_prior(
                    self.state.block(&self.layout, j, p),
                    &self.layout,
                    p,
                    self.state.lambda2[slot],
                    self.state.tau2[j],
                    self.state.kappa2[j],
                );
                lp += log_half_cauchy_aux(self.state.lambda2[slot], self.state.nu[slot]);
            }
            lp += log_half_cauchy_aux(self.state.tau2[j], self.state.xi[j]);
            lp += log_variance_prior(self.state.kappa2[j], self.hyper.zeta, self.hyper.rho);
            lp += log_variance_prior(self.state.phi2[j], self.hyper.a, self.hyper.b);
            for i in 0..n {
                lp += log_normal(self.state.r[i * jn + j], self.state.phi2[j]);
            }
        }
        lp
    }

    /// One full sweep in the order u, c, rescale, eta, beta, recenter, r,
    /// horseshoe, kappa, phi.
    pub fn sweep(&mut self) -> Result<()> {
        let moves = self.config.moves;
        if moves.u {
            self.update_u()?;
        }
        if moves.c {
            self.update_c();
        }
        if moves.rescale {
            self.rescale_totals();
        }
        if moves.eta {
            self.update_eta()?;
        }
        if moves.beta {
            for j in 0..self.n_taxa() {
                for p in 0..self.layout.n_blocks() {
                    self.update_beta_block(j, p)?;
                }
            }
        }
        if moves.recenter {
            for j in 0..self.n_taxa() {
                self.recenter_intercept(j);
            }
        }
        if moves.r {
            for i in 0..self.data.n_individuals() {
                for j in 0..self.n_taxa() {
                    self.update_r(i, j)?;
                }
            }
        }
        if moves.horseshoe {
            for j in 0..self.n_taxa() {
                self.update_horseshoe(j);
            }
        }
        if moves.kappa {
            for j in 0..self.n_taxa() {
                self.update_kappa(j);
            }
        }
        if moves.phi {
            for j in 0..self.n_taxa() {
                self.update_phi(j);
            }
        }
        self.iteration += 1;
        if cfg!(debug_assertions) {
            self.state.validate(self.data, &self.layout)?;
        }
        Ok(())
    }

    /// `u ~ Gamma(z., T)` per record.
    pub fn update_u(&mut self) -> Result<()> {
        for k in 0..self.data.n_records() {
            let total = self.totals[k];
            if !(total > 0.0) {
                return Err(Error::EmptyAtRiskSet { record: k });
            }
            self.state.u[k] = sample_gamma(self.depth[k], total, &mut self.rng);
        }
        Ok(())
    }

    /// `c_j ~ Gamma(z_j + gamma_j, 1 + u)` for at-risk cells.
    pub fn update_c(&mut self) {
        let jn = self.n_taxa();
        for (k, rec) in self.data.records().iter().enumerate() {
            let rate = 1.0 + self.state.u[k];
            let mut total = 0.0;
            for j in 0..jn {
                if !self.state.eta[rec.individual * jn + j] {
                    continue;
                }
                let cell = k * jn + j;
                let shape = f64::from(rec.counts[j]) + self.log_gamma[cell].exp();
                let lc = sample_log_gamma(shape, rate, &mut self.rng);
                self.state.log_c[cell] = lc;
                total += lc.exp();
            }
            self.totals[k] = total;
        }
    }

    /// Redraws each record's scale `T` with `u` integrated out, then `u`.
    pub fn rescale_totals(&mut self) {
        let jn = self.n_taxa();
        for (k, rec) in self.data.records().iter().enumerate() {
            let mut shape = 0.0;
            for j in 0..jn {
                if self.state.eta[rec.individual * jn + j] {
                    shape += self.log_gamma[k * jn + j].exp();
                }
            }
            let old = self.totals[k];
            if !(shape > 0.0 && old > 0.0) {
                continue;
            }
            let log_new = sample_log_gamma(shape, 1.0, &mut self.rng);
            let shift = log_new - old.ln();
            let mut total = 0.0;
            for j in 0..jn {
                let cell = k * jn + j;
                if self.state.eta[rec.individual * jn + j] {
                    self.state.log_c[cell] += shift;
                    total += self.state.log_c[cell].exp();
                }
            }
            self.totals[k] = total;
            self.state.u[k] = sample_gamma(self.depth[k], total, &mut self.rng);
        }
    }

    /// Log acceptance ratio of flipping `eta_ij`. Adding proposes each
    /// `c_ij(t)` from `Gamma(gamma, 1 + u)` so the `c` terms cancel.
    pub(crate) fn eta_log_ratio(&self, i: usize, j: usize) -> f64 {
        let jn = self.n_taxa();
        let n = self.data.n_individuals();
        let on = self.state.eta[i * jn + j];
        let mut lik = 0.0;
        for k in self.data.individual_range(i) {
            lik += self.log_gamma[k * jn + j].exp() * (1.0 + self.state.u[k]).ln();
        }
        let ones = self.at_risk[j];
        let (alpha, beta) = (self.hyper.alpha, self.hyper.beta);
        let current = log_beta_binomial_column(ones, n, alpha, beta);
        if on {
            log_beta_binomial_column(ones - 1, n, alpha, beta) - current + lik
        } else {
            log_beta_binomial_column(ones + 1, n, alpha, beta) - current - lik
        }
    }

    pub fn update_eta(&mut self) -> Result<()> {
        let jn = self.n_taxa();
        for idx in 0..self.eligible.len() {
            let (i, j) = self.eligible[idx];
            if !self.data.all_zero(i, j) {
                return Err(Error::Internal(format!(
                    "pair ({i}, {j}) with positive counts proposed for a flip"
                )));
            }
            let on = self.state.eta[i * jn + j];
            let log_ratio = self.eta_log_ratio(i, j);
            let accepted = accept(&mut self.rng, log_ratio);
            if on {
                self.ledger.eta_remove.record(accepted);
            } else {
                self.ledger.eta_add.record(accepted);
            }
            if !accepted {
                continue;
            }
            if on {
                self.state.eta[i * jn + j] = false;
                self.at_risk[j] -= 1;
                for k in self.data.individual_range(i) {
                    let cell = k * jn + j;
                    self.state.log_c[cell] = f64::NEG_INFINITY;
                    self.lgamma[cell] = 0.0;
                    self.totals[k] = (0..jn)
                        .map(|q| self.state.log_c[k * jn + q].exp())
                        .sum();
                }
            } else {
                self.state.eta[i * jn + j] = true;
                self.at_risk[j] += 1;
                for k in self.data.individual_range(i) {
                    let cell = k * jn + j;
                    let gamma = self.log_gamma[cell].exp();
                    let lc = sample_log_gamma(gamma, 1.0 + self.state.u[k], &mut self.rng);
                    self.state.log_c[cell] = lc;
                    self.lgamma[cell] = ln_gamma(gamma);
                    self.totals[k] += lc.exp();
                }
            }
        }
        Ok(())
    }

    fn block_slot(&self, j: usize, p: usize) -> usize {
        j * self.layout.n_blocks() + p
    }

    fn block_prior(&self, block: &[f64], j: usize, p: usize) -> f64 {
        let slot = self.block_slot(j, p);
        log_block_prior(
            block,
            &self.layout,
            p,
            self.state.lambda2[slot],
            self.state.tau2[j],
            self.state.kappa2[j],
        )
    }

    /// Data part of the log ratio when `log gamma` of taxon `j` moves by
    /// `shift(k)` on the records of at-risk individuals in `individuals`.
    fn concentration_delta(
        &self,
        j: usize,
        individuals: impl Iterator<Item = usize>,
        shift: impl Fn(usize) -> f64,
    ) -> f64 {
        if self.config.mute_likelihood {
            return 0.0;
        }
        let jn = self.n_taxa();
        let mut delta = 0.0;
        for i in individuals {
            if !self.state.eta[i * jn + j] {
                continue;
            }
            for k in self.data.individual_range(i) {
                let cell = k * jn + j;
                let lg_old = self.log_gamma[cell];
                let lg_new = lg_old + shift(k);
                let (g_old, g_new) = (lg_old.exp(), lg_new.exp());
                delta += (g_new - g_old) * self.state.log_c[cell] - ln_gamma(g_new) + self.lgamma[cell];
            }
        }
        delta
    }

    /// Log acceptance ratio of moving block `(j, p)` by `step`.
    pub(crate) fn beta_log_ratio(&self, j: usize, p: usize, step: &[f64]) -> f64 {
        let range = self.layout.block_range(p);
        let current = self.state.block(&self.layout, j, p);
        let proposed: Vec<f64> = current.iter().zip(step).map(|(b, s)| b + s).collect();
        let prior = self.block_prior(&proposed, j, p) - self.block_prior(current, j, p);
        let lik = self.concentration_delta(j, 0..self.data.n_individuals(), |k| {
            let feats = &self.design.row(k)[range.clone()];
            feats.iter().zip(step).map(|(f, s)| f * s).sum()
        });
        prior + lik
    }

    pub(crate) fn apply_beta_step(&mut self, j: usize, p: usize, step: &[f64]) {
        let jn = self.n_taxa();
        let range = self.layout.block_range(p);
        for (b, s) in self.state.block_mut(&self.layout, j, p).iter_mut().zip(step) {
            *b += s;
        }
        for k in 0..self.data.n_records() {
            let feats = &self.design.row(k)[range.clone()];
            let shift: f64 = feats.iter().zip(step).map(|(f, s)| f * s).sum();
            let cell = k * jn + j;
            self.log_gamma[cell] += shift;
            if self.state.eta[self.data.record(k).individual * jn + j] {
                self.lgamma[cell] = ln_gamma(self.log_gamma[cell].exp());
            }
        }
    }

    pub fn update_beta_block(&mut self, j: usize, p: usize) -> Result<()> {
        let d = self.layout.block_len(p);
        let slot = self.block_slot(j, p);
        let eps: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
        let mut step = vec![0.0; d];
        self.proposals.beta[slot].step(&eps, &mut step);
        let log_ratio = self.beta_log_ratio(j, p, &step);
        let accepted = accept(&mut self.rng, log_ratio);
        self.ledger.beta.record(accepted);
        self.proposals.beta[slot].scale.record(accepted);
        if accepted {
            self.apply_beta_step(j, p, &step);
            let threshold = self.config.divergence_threshold;
            if let Some(b) = self
                .state
                .block(&self.layout, j, p)
                .iter()
                .find(|b| !(b.abs() <= threshold))
            {
                return Err(Error::Divergence {
                    iteration: self.iteration,
                    detail: format!(
                        "|beta*| = {} exceeds {threshold} in block (taxon {j}, block {p}); \
                         kappa2 = {}, tau2 = {}, lambda2 = {}",
                        b.abs(),
                        self.state.kappa2[j],
                        self.state.tau2[j],
                        self.state.lambda2[slot]
                    ),
                });
            }
        }
        Ok(())
    }

    /// Exact draw along the direction that raises `beta*_{j00}` and lowers
    /// every `r_ij` by the same amount; the concentrations are unchanged so
    /// only the Gaussian priors enter.
    pub fn recenter_intercept(&mut self, j: usize) {
        let jn = self.n_taxa();
        let n = self.data.n_individuals();
        let phi2 = self.state.phi2[j];
        let b0 = self.state.block(&self.layout, j, 0)[0];
        let sum_r: f64 = (0..n).map(|i| self.state.r[i * jn + j]).sum();
        let precision = 1.0 + n as f64 / phi2;
        let mean = (sum_r / phi2 - b0) / precision;
        let z: f64 = self.rng.sample(StandardNormal);
        let delta = mean + z / precision.sqrt();
        self.state.block_mut(&self.layout, j, 0)[0] += delta;
        for i in 0..n {
            self.state.r[i * jn + j] -= delta;
        }
    }

    pub(crate) fn r_log_ratio(&self, i: usize, j: usize, step: f64) -> f64 {
        let jn = self.n_taxa();
        let phi2 = self.state.phi2[j];
        let r = self.state.r[i * jn + j];
        let prior = log_normal(r + step, phi2) - log_normal(r, phi2);
        prior + self.concentration_delta(j, std::iter::once(i), |_| step)
    }

    pub fn update_r(&mut self, i: usize, j: usize) -> Result<()> {
        let jn = self.n_taxa();
        let pair = i * jn + j;
        let z: f64 = self.rng.sample(StandardNormal);
        let step = self.proposals.r[pair].scale * z;
        let log_ratio = self.r_log_ratio(i, j, step);
        let accepted = accept(&mut self.rng, log_ratio);
        self.ledger.r.record(accepted);
        self.proposals.r[pair].record(accepted);
        if accepted {
            self.state.r[pair] += step;
            let at_risk = self.state.eta[pair];
            for k in self.data.individual_range(i) {
                let cell = k * jn + j;
                self.log_gamma[cell] += step;
                if at_risk {
                    self.lgamma[cell] = ln_gamma(self.log_gamma[cell].exp());
                }
            }
        }
        Ok(())
    }

    fn shrunk_sum_squares(&self, j: usize, p: usize) -> f64 {
        let block = self.state.block(&self.layout, j, p);
        self.layout
            .shrunk_range(p)
            .map(|d| block[d] * block[d])
            .sum()
    }

    /// Sum over blocks of the coefficient log priors of taxon `j` as a
    /// function of its scale parameters.
    fn taxon_prior(&self, j: usize, tau2: f64, kappa2: f64, lambda_override: Option<(usize, f64)>) -> f64 {
        (0..self.layout.n_blocks())
            .map(|p| {
                let slot = self.block_slot(j, p);
                let lambda2 = match lambda_override {
                    Some((q, v)) if q == p => v,
                    _ => self.state.lambda2[slot],
                };
                log_block_prior(
                    self.state.block(&self.layout, j, p),
                    &self.layout,
                    p,
                    lambda2,
                    tau2,
                    kappa2,
                )
            })
            .sum()
    }

    pub fn update_horseshoe(&mut self, j: usize) {
        let blocks = self.layout.n_blocks();
        let kappa2 = self.state.kappa2[j];
        for p in 0..blocks {
            let slot = self.block_slot(j, p);
            let m = self.layout.shrunk_count(p) as f64;
            self.state.nu[slot] =
                sample_inv_gamma(1.0, 1.0 + 1.0 / self.state.lambda2[slot], &mut self.rng);
            let ss = self.shrunk_sum_squares(j, p);
            let tau2 = self.state.tau2[j];
            let old = self.state.lambda2[slot];
            let proposal = sample_inv_gamma(
                (m + 1.0) / 2.0,
                1.0 / self.state.nu[slot] + ss / (2.0 * tau2),
                &mut self.rng,
            );
            let weight = |l2: f64| 0.5 * m * (1.0 + l2 * tau2 / kappa2).ln();
            let accepted = accept(&mut self.rng, weight(proposal) - weight(old));
            self.ledger.lambda_indep.record(accepted);
            if accepted {
                self.state.lambda2[slot] = proposal;
            }
            // log-scale walk on the exact conditional
            let current = self.state.lambda2[slot];
            let z: f64 = self.rng.sample(StandardNormal);
            let proposal = current * (self.proposals.lambda[slot].scale * z).exp();
            let nu = self.state.nu[slot];
            let target = |l2: f64, this: &Self| {
                log_half_cauchy_aux(l2, nu) + l2.ln() + this.taxon_prior(j, tau2, kappa2, Some((p, l2)))
            };
            let log_ratio = target(proposal, self) - target(current, self);
            let accepted = accept(&mut self.rng, log_ratio);
            self.ledger.lambda_walk.record(accepted);
            self.proposals.lambda[slot].record(accepted);
            if accepted {
                self.state.lambda2[slot] = proposal;
            }
        }

        self.state.xi[j] = sample_inv_gamma(1.0, 1.0 + 1.0 / self.state.tau2[j], &mut self.rng);
        let mut m_total = 0.0;
        let mut scaled_ss = 0.0;
        for p in 0..blocks {
            let slot = self.block_slot(j, p);
            m_total += self.layout.shrunk_count(p) as f64;
            scaled_ss += self.shrunk_sum_squares(j, p) / self.state.lambda2[slot];
        }
        let old = self.state.tau2[j];
        let proposal = sample_inv_gamma(
            (m_total + 1.0) / 2.0,
            1.0 / self.state.xi[j] + scaled_ss / 2.0,
            &mut self.rng,
        );
        let weight = |t2: f64, this: &Self| -> f64 {
            (0..blocks)
                .map(|p| {
                    let l2 = this.state.lambda2[this.block_slot(j, p)];
                    0.5 * this.layout.shrunk_count(p) as f64 * (1.0 + l2 * t2 / kappa2).ln()
                })
                .sum()
        };
        let log_ratio = weight(proposal, self) - weight(old, self);
        let accepted = accept(&mut self.rng, log_ratio);
        self.ledger.tau_indep.record(accepted);
        if accepted {
            self.state.tau2[j] = proposal;
        }
        let current = self.state.tau2[j];
        let z: f64 = self.rng.sample(StandardNormal);
        let proposal = current * (self.proposals.tau[j].scale * z).exp();
        let xi = self.state.xi[j];
        let target = |t2: f64, this: &Self| {
            log_half_cauchy_aux(t2, xi) + t2.ln() + this.taxon_prior(j, t2, kappa2, None)
        };
        let log_ratio = target(proposal, self) - target(current, self);
        let accepted = accept(&mut self.rng, log_ratio);
        self.ledger.tau_walk.record(accepted);
        self.proposals.tau[j].record(accepted);
        if accepted {
            self.state.tau2[j] = proposal;
        }
    }

    /// Log ratio of moving `kappa2_j` to `proposal` (log-scale walk, so the
    /// Jacobian `kappa2` is included).
    pub(crate) fn kappa_log_ratio(&self, j: usize, proposal: f64) -> f64 {
        let tau2 = self.state.tau2[j];
        let target = |k2: f64| {
            log_variance_prior(k2, self.hyper.zeta, self.hyper.rho)
                + k2.ln()
                + self.taxon_prior(j, tau2, k2, None)
        };
        target(proposal) - target(self.state.kappa2[j])
    }

    pub fn update_kappa(&mut self, j: usize) {
        let z: f64 = self.rng.sample(StandardNormal);
        let proposal = self.state.kappa2[j] * (self.proposals.kappa[j].scale * z).exp();
        let log_ratio = self.kappa_log_ratio(j, proposal);
        let accepted = accept(&mut self.rng, log_ratio);
        self.ledger.kappa.record(accepted);
        self.proposals.kappa[j].record(accepted);
        if accepted {
            self.state.kappa2[j] = proposal;
        }
    }

    /// `phi^-2 ~ Gamma(a + N/2, b + sum_i r_ij^2 / 2)`.
    pub fn update_phi(&mut self, j: usize) {
        let jn = self.n_taxa();
        let n = self.data.n_individuals();
        let ss: f64 = (0..n).map(|i| self.state.r[i * jn + j].powi(2)).sum();
        let precision = sample_gamma(
            self.hyper.a + n as f64 / 2.0,
            self.hyper.b + ss / 2.0,
            &mut self.rng,
        );
        self.state.phi2[j] = 1.0 / precision;
    }

    /// Applies one round of burn-in adaptation.
    pub fn adapt(&mut self) {
        let block_target = self.config.target_accept_block;
        let scalar_target = self.config.target_accept_scalar;
        let blocks = self.layout.n_blocks();
        for (slot, prop) in self.proposals.beta.iter_mut().enumerate() {
            let target = if self.layout.block_len(slot % blocks) > 1 {
                block_target
            } else {
                scalar_target
            };
            prop.scale.adapt(target);
            if self.config.adapt_covariance {
                prop.refresh_covariance();
            }
        }
        for prop in self
            .proposals
            .r
            .iter_mut()
            .chain(&mut self.proposals.kappa)
            .chain(&mut self.proposals.lambda)
            .chain(&mut self.proposals.tau)
        {
            prop.adapt(scalar_target);
        }
    }

    /// Feeds the current coefficient blocks to the covariance learners.
    pub fn observe_blocks(&mut self) {
        for j in 0..self.n_taxa() {
            for p in 0..self.layout.n_blocks() {
                let slot = self.block_slot(j, p);
                if self.layout.block_len(p) > 1 {
                    let block = self.state.block(&self.layout, j, p).to_vec();
                    self.proposals.beta[slot].observe(&block);
                }
            }
        }
    }

    pub fn freeze_adaptation(&mut self) {
        for prop in &mut self.proposals.beta {
            prop.clear_stats();
        }
    }

    pub(crate) fn reset_ledger(&mut self) {
        self.ledger = Ledger::default();
    }

    /// Snapshot of the current state as a retained draw.
    pub fn snapshot(&self, store_subject: bool) -> Draw {
        Draw {
            iteration: self.iteration,
            log_joint: self.log_joint(),
            beta: self.state.beta.clone(),
            lambda2: self.state.lambda2.clone(),
            tau2: self.state.tau2.clone(),
            kappa2: self.state.kappa2.clone(),
            phi2: self.state.phi2.clone(),
            r: store_subject.then(|| self.state.r.clone()),
            eta: store_subject.then(|| self.state.eta.clone()),
        }
    }

    /// Adds the current subject-level expected composition to `acc`.
    pub fn accumulate_subject_ra(&self, acc: &mut [f64]) {
        let jn = self.n_taxa();
        for k in 0..self.data.n_records() {
            let row = &self.log_gamma[k * jn..(k + 1) * jn];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|lg| (lg - max).exp()).sum();
            for j in 0..jn {
                acc[k * jn + j] += (row[j] - max).exp() / denom;
            }
        }
    }

    pub fn accumulate_eta(&self, acc: &mut [f64]) {
        for (a, &e) in acc.iter_mut().zip(&self.state.eta) {
            *a += if e { 1.0 } else { 0.0 };
        }
    }

    #[cfg(test)]
    pub(crate) fn set_state_for_test(&mut self, state: ParameterState) -> Result<()> {
        state.validate(self.data, &self.layout)?;
        self.state = state;
        self.refresh_caches(false)
    }
}

/// Draws the initial state: uniform coefficients and random intercepts,
/// at-risk flags from the data, variances from their priors, and latents
/// from their conditionals.
pub fn initial_state(
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    layout: &CoefficientLayout,
    design: &Design,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> ParameterState {
    let mut state = ParameterState::zeros(data, layout);
    let jn = data.n_taxa();
    let br = config.init.beta_range;
    let rr = config.init.r_range;
    for b in &mut state.beta {
        *b = rng.random_range(-br..br);
    }
    for r in &mut state.r {
        *r = rng.random_range(-rr..rr);
    }
    for i in 0..data.n_individuals() {
        for j in 0..jn {
            state.eta[i * jn + j] = !data.all_zero(i, j);
        }
    }
    for slot in 0..state.lambda2.len() {
        state.nu[slot] = sample_inv_gamma(0.5, 1.0, rng);
        state.lambda2[slot] = sample_inv_gamma(0.5, 1.0 / state.nu[slot], rng);
    }
    for j in 0..jn {
        state.xi[j] = sample_inv_gamma(0.5, 1.0, rng);
        state.tau2[j] = sample_inv_gamma(0.5, 1.0 / state.xi[j], rng);
        state.kappa2[j] = 1.0 / sample_gamma(hyper.zeta, hyper.rho, rng);
        state.phi2[j] = 1.0 / sample_gamma(hyper.a, hyper.b, rng);
    }
    for (k, rec) in data.records().iter().enumerate() {
        let mut total = 0.0;
        for j in 0..jn {
            let cell = k * jn + j;
            if state.eta[rec.individual * jn + j] {
                let coefs = state.taxon_coefs(layout, j);
                let lg: f64 = design
                    .row(k)
                    .iter()
                    .zip(coefs)
                    .map(|(f, b)| f * b)
                    .sum::<f64>()
                    + state.r[rec.individual * jn + j];
                state.log_c[cell] = sample_log_gamma(lg.exp(), 1.0, rng);
                total += state.log_c[cell].exp();
            } else {
                state.log_c[cell] = f64::NEG_INFINITY;
            }
        }
        state.u[k] = sample_gamma(rec.total() as f64, total, rng);
    }
    state
}
