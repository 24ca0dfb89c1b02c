//! Synthetic longitudinal count data with known coefficient functions, and
//! the metrics used to score fits against that truth.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::inference::{delta_ra, linspace, quantile};
use crate::model::{CovariateInfo, CovariateProfile, LongitudinalDataset, Record};
use crate::sampler::geweke::sample_multinomial;
use crate::sampler::random::sample_log_gamma;
use crate::sampler::PosteriorDraws;

/// The five shapes used for intercepts and covariate effects.
pub fn shape(k: usize, t: f64) -> f64 {
    match k {
        1 => (-0.2 * (t - 5.0).powi(2) + 5.0) / 7.0,
        2 => 1.0 / (1.75 + (-1.25 * (t - 5.0)).exp()),
        3 => 0.07 * t,
        4 => 0.5,
        5 => 0.0,
        _ => panic!("shape index {k} outside 1..=5"),
    }
}

/// `sign * f_k(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub sign: f64,
    pub shape: usize,
}

impl Assignment {
    pub const NULL: Assignment = Assignment { sign: 1.0, shape: 5 };

    pub fn at(&self, t: f64) -> f64 {
        self.sign * shape(self.shape, t)
    }

    pub fn is_active(&self) -> bool {
        self.shape != 5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_individuals: usize,
    pub n_taxa: usize,
    pub n_covariates: usize,
    /// Taxa `0..n_active` receive covariate effects.
    pub n_active: usize,
    pub min_observations: usize,
    pub max_observations: usize,
    pub time_range: (f64, f64),
    pub min_depth: u64,
    pub max_depth: u64,
    pub r_range: f64,
    pub min_at_risk: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_individuals: 50,
            n_taxa: 50,
            n_covariates: 10,
            n_active: 4,
            min_observations: 3,
            max_observations: 10,
            time_range: (0.0, 10.0),
            min_depth: 1000,
            max_depth: 10_000,
            r_range: 0.05,
            min_at_risk: 5,
        }
    }
}

impl SimulationConfig {
    pub fn with_taxa(n_taxa: usize) -> Self {
        Self {
            n_taxa,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_individuals < self.min_at_risk || self.n_individuals == 0 {
            return Err(Error::InvalidConfig(
                "need at least min_at_risk individuals".into(),
            ));
        }
        if self.n_taxa == 0 || self.n_active > self.n_taxa {
            return Err(Error::InvalidConfig("n_active must not exceed n_taxa".into()));
        }
        if self.min_observations == 0 || self.min_observations > self.max_observations {
            return Err(Error::InvalidConfig("bad observation-count range".into()));
        }
        if !(self.time_range.0 < self.time_range.1) || self.min_depth == 0 || self.min_depth > self.max_depth {
            return Err(Error::InvalidConfig("bad time or depth range".into()));
        }
        Ok(())
    }
}

/// Everything the generator drew, enough to evaluate any true quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub config: SimulationConfig,
    pub seed: u64,
    /// Intercept function per taxon.
    pub intercepts: Vec<Assignment>,
    /// `n_taxa * n_covariates`, taxon-major.
    pub effects: Vec<Assignment>,
    /// `n_individuals * n_taxa`.
    pub r: Vec<f64>,
    /// At-risk probability per taxon.
    pub theta: Vec<f64>,
    /// `n_individuals * n_taxa`.
    pub eta: Vec<bool>,
}

impl SimulationTruth {
    pub fn n_taxa(&self) -> usize {
        self.intercepts.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.config.n_covariates
    }

    /// `beta_jp(t)`, `p = 0` the intercept.
    pub fn coefficient(&self, j: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            self.intercepts[j].at(t)
        } else {
            self.effects[j * self.n_covariates() + p - 1].at(t)
        }
    }

    pub fn is_active(&self, j: usize, p: usize) -> bool {
        j < self.config.n_active && self.effects[j * self.n_covariates() + p - 1].is_active()
    }

    /// Population-level log concentrations at `(t, x)`, without `r`.
    pub fn linear_predictors(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (0..self.n_taxa())
            .map(|j| {
                let mut v = self.coefficient(j, 0, t);
                for (p, xp) in x.iter().enumerate() {
                    v += self.coefficient(j, p + 1, t) * xp;
                }
                v
            })
            .collect()
    }

    /// True multiplicative difference in relative abundance at `x = 0` for a
    /// `v`-unit increase of covariate `p` (1-based).
    pub fn delta_ra(&self, t: f64, p: usize, v: f64) -> Vec<f64> {
        let base: Vec<f64> = (0..self.n_taxa()).map(|j| self.coefficient(j, 0, t)).collect();
        let shifted: Vec<f64> = (0..self.n_taxa())
            .map(|j| base[j] + v * self.coefficient(j, p, t))
            .collect();
        let a = crate::inference::softmax(&base);
        let b = crate::inference::softmax(&shifted);
        b.iter().zip(&a).map(|(x, y)| x / y).collect()
    }

    /// Subject-level expected composition `gamma / sum gamma` of a record.
    pub fn subject_composition(&self, individual: usize, t: f64, x: &[f64]) -> Vec<f64> {
        let jn = self.n_taxa();
        let mut lp = self.linear_predictors(t, x);
        for (j, v) in lp.iter_mut().enumerate() {
            *v += self.r[individual * jn + j];
        }
        crate::inference::softmax(&lp)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Substream seed for taxon `j`: the generator draws everything specific to
/// a taxon from its own stream, so datasets with more taxa extend rather
/// than reshuffle smaller ones.
fn taxon_stream(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64 + 1);
    rng
}

/// `Binomial(n, theta)` conditioned on at least `min` successes, by
/// inversion over the truncated support.
fn truncated_binomial<R: Rng + ?Sized>(n: usize, theta: f64, min: usize, rng: &mut R) -> usize {
    let log_pmf: Vec<f64> = (min..=n)
        .map(|k| {
            ln_binomial(n as u64, k as u64)
                + k as f64 * theta.ln()
                + (n - k) as f64 * (1.0 - theta).ln()
        })
        .collect();
    let max = log_pmf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_pmf.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return min + k;
        }
        u -= w;
    }
    n
}

fn sample_theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    match rng.random_range(0..3) {
        0 => rng.random_range(0.0..0.15),
        1 => rng.random_range(0.15..0.75),
        _ => rng.random_range(0.75..0.90),
    }
}

fn random_assignment<R: Rng + ?Sized>(rng: &mut R, shapes: usize) -> Assignment {
    let shape = rng.random_range(1..=shapes);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    Assignment { sign, shape }
}

/// Generates one dataset and its truth.
pub fn generate(config: &SimulationConfig, seed: u64) -> Result<(LongitudinalDataset, SimulationTruth)> {
    config.validate()?;
    let (n, jn, pn) = (config.n_individuals, config.n_taxa, config.n_covariates);
    let mut design_rng = ChaCha8Rng::seed_from_u64(seed);

    struct Slot {
        individual: usize,
        time: f64,
        x: Vec<f64>,
        depth: u64,
    }
    let mut slots = Vec::new();
    for i in 0..n {
        let m = design_rng.random_range(config.min_observations..=config.max_observations);
        let mut times: Vec<f64> = (0..m)
            .map(|_| design_rng.random_range(config.time_range.0..config.time_range.1))
            .collect();
        times.sort_by(f64::total_cmp);
        for time in times {
            let x = (0..pn).map(|_| design_rng.sample(StandardNormal)).collect();
            let depth = design_rng.random_range(config.min_depth..=config.max_depth);
            slots.push(Slot {
                individual: i,
                time,
                x,
                depth,
            });
        }
    }

    let mut intercepts = Vec::with_capacity(jn);
    let mut effects = Vec::with_capacity(jn * pn);
    let mut r = vec![0.0; n * jn];
    let mut theta = Vec::with_capacity(jn);
    let mut eta = vec![false; n * jn];
    // log c per slot and taxon
    let mut log_c = vec![f64::NEG_INFINITY; slots.len() * jn];
    for j in 0..jn {
        let mut rng = taxon_stream(seed, j);
        intercepts.push(random_assignment(&mut rng, 4));
        for _ in 0..pn {
            effects.push(if j < config.n_active {
                random_assignment(&mut rng, 5)
            } else {
                Assignment::NULL
            });
        }
        for i in 0..n {
            r[i * jn + j] = rng.random_range(-config.r_range..config.r_range);
        }
        let th = sample_theta(&mut rng);
        theta.push(th);
        let k = truncated_binomial(n, th, config.min_at_risk, &mut rng);
        for i in sample_indices(&mut rng, n, k) {
            eta[i * jn + j] = true;
        }
        for (s, slot) in slots.iter().enumerate() {
            if !eta[slot.individual * jn + j] {
                continue;
            }
            let mut lg = intercepts[j].at(slot.time) + r[slot.individual * jn + j];
            for (p, xp) in slot.x.iter().enumerate() {
                lg += effects[j * pn + p].at(slot.time) * xp;
            }
            log_c[s * jn + j] = sample_log_gamma(lg.exp(), 1.0, &mut rng);
        }
    }

    // an individual left without any at-risk taxon is given the taxon with
    // the highest at-risk probability
    for i in 0..n {
        if (0..jn).all(|j| !eta[i * jn + j]) {
            let j = (0..jn).max_by(|&a, &b| theta[a].total_cmp(&theta[b])).unwrap();
            eta[i * jn + j] = true;
            let mut rng = taxon_stream(seed ^ 0x5EED, i * jn + j);
            for (s, slot) in slots.iter().enumerate() {
                if slot.individual == i {
                    let mut lg = intercepts[j].at(slot.time) + r[i * jn + j];
                    for (p, xp) in slot.x.iter().enumerate() {
                        lg += effects[j * pn + p].at(slot.time) * xp;
                    }
                    log_c[s * jn + j] = sample_log_gamma(lg.exp(), 1.0, &mut rng);
                }
            }
        }
    }

    let mut records = Vec::with_capacity(slots.len());
    for (s, slot) in slots.into_iter().enumerate() {
        let psi = crate::inference::softmax(&log_c[s * jn..(s + 1) * jn]);
        let counts = sample_multinomial(slot.depth, &psi, &mut design_rng);
        records.push(Record {
            individual: slot.individual,
            time: slot.time,
            x: slot.x,
            counts,
        });
    }
    let data = LongitudinalDataset::new(
        (0..n).map(|i| format!("ind{:03}", i + 1)).collect(),
        (0..jn).map(|j| format!("taxon{:03}", j + 1)).collect(),
        (1..=pn).map(|p| CovariateInfo::functional(format!("x{p}"))).collect(),
        records,
    )?;
    let truth = SimulationTruth {
        config: config.clone(),
        seed,
        intercepts,
        effects,
        r,
        theta,
        eta,
    };
    Ok((data, truth))
}

/// [`generate`] with the default design and `n_taxa` taxa.
pub fn generate_dataset(n_taxa: usize, seed: u64) -> Result<(LongitudinalDataset, SimulationTruth)> {
    generate(&SimulationConfig::with_taxa(n_taxa), seed)
}

/// The scoring grid: 101 points from 0 to 10.
pub fn scoring_grid() -> Vec<f64> {
    linspace(0.0, 10.0, 101)
}

/// Fraction of grid points whose equal-tailed 95% interval over draws
/// contains the truth. `samples[s][g]`.
pub fn coverage95(samples: &[Vec<f64>], truth: &[f64]) -> f64 {
    let g = truth.len();
    let hits = (0..g)
        .filter(|&k| {
            let col: Vec<f64> = samples.iter().map(|row| row[k]).collect();
            let lo = quantile(&col, 0.025);
            let hi = quantile(&col, 0.975);
            lo <= truth[k] && truth[k] <= hi
        })
        .count();
    hits as f64 / g as f64
}

/// Mean over draws of the root mean squared error over the grid.
pub fn armse(samples: &[Vec<f64>], truth: &[f64]) -> f64 {
    let g = truth.len() as f64;
    samples
        .iter()
        .map(|row| {
            (row.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g).sqrt()
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Aitchison distance between two strictly positive compositions.
pub fn aitchison_distance(x: &[f64], y: &[f64]) -> f64 {
    let clr = |v: &[f64]| -> Vec<f64> {
        let logs: Vec<f64> = v.iter().map(|a| a.ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        logs.into_iter().map(|l| l - m).collect()
    };
    clr(x)
        .iter()
        .zip(clr(y))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean Aitchison distance over paired compositions.
pub fn mean_aitchison(estimates: &[Vec<f64>], truths: &[Vec<f64>]) -> f64 {
    estimates
        .iter()
        .zip(truths)
        .map(|(a, b)| aitchison_distance(a, b))
        .sum::<f64>()
        / estimates.len() as f64
}

/// Scores of one (taxon, covariate) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub taxon: usize,
    pub covariate: usize,
    pub active: bool,
    pub theta: f64,
    pub ra95: f64,
    pub b95: f64,
    pub armse: f64,
}

/// Summary of one fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub seed: u64,
    pub n_taxa: usize,
    pub mead: f64,
    pub active_ra95: f64,
    pub active_b95: f64,
    pub active_armse: f64,
    pub inactive_ra95: f64,
    pub inactive_b95: f64,
    pub inactive_armse: f64,
    pub runtime_seconds: f64,
}

fn mean_of(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores every (taxon, covariate) pair of a fit against the truth.
///
/// Pairs are "active" when the taxon is one of the first `n_active`; this
/// mirrors the usual split of the results into taxa with and without direct
/// covariate effects.
pub fn score_pairs(draws: &PosteriorDraws, truth: &SimulationTruth, grid: &[f64]) -> Result<Vec<PairScore>> {
    let layout = draws.layout();
    let basis = draws.basis();
    if layout.n_taxa() != truth.n_taxa() || layout.n_covariates() != truth.n_covariates() {
        return Err(Error::InvalidConfig("fit and truth dimensions differ".into()));
    }
    if draws.is_empty() {
        return Err(Error::InvalidConfig("no draws to score".into()));
    }
    let jn = truth.n_taxa();
    let pn = truth.n_covariates();
    let reference = CovariateProfile::reference(pn);
    // delta_ra over all taxa at once, per (draw, grid point, covariate)
    let mut dra = vec![vec![vec![vec![0.0; grid.len()]; draws.len()]; jn]; pn];
    let mut betas = vec![vec![vec![vec![0.0; grid.len()]; draws.len()]; jn]; pn];
    for (s, d) in draws.draws.iter().enumerate() {
        for (g, &t) in grid.iter().enumerate() {
            let row = basis.evaluate(t);
            for p in 1..=pn {
                let v = delta_ra(layout, basis, &d.beta, t, &reference, p, 1.0)?;
                for j in 0..jn {
                    dra[p - 1][j][s][g] = v[j];
                    betas[p - 1][j][s][g] =
                        layout.coefficient_at(d.taxon_coefs(layout, j), p, &row);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(jn * pn);
    for p in 1..=pn {
        let omega: Vec<Vec<f64>> = grid.iter().map(|&t| truth.delta_ra(t, p, 1.0)).collect();
        for j in 0..jn {
            let w: Vec<f64> = omega.iter().map(|o| o[j]).collect();
            let f: Vec<f64> = grid.iter().map(|&t| truth.coefficient(j, p, t)).collect();
            out.push(PairScore {
                taxon: j,
                covariate: p,
                active: j < truth.config.n_active,
                theta: truth.theta[j],
                ra95: coverage95(&dra[p - 1][j], &w),
                b95: coverage95(&betas[p - 1][j], &f),
                armse: armse(&dra[p - 1][j], &w),
            });
        }
    }
    Ok(out)
}

/// MeAD of the posterior-mean subject-level composition against the true
/// one, over all records.
pub fn score_mead(draws: &PosteriorDraws, data: &LongitudinalDataset, truth: &SimulationTruth) -> Result<f64> {
    let jn = data.n_taxa();
    if draws.subject_ra_mean.len() != data.n_records() * jn {
        return Err(Error::InvalidConfig("fit does not match the dataset".into()));
    }
    let estimates: Vec<Vec<f64>> = draws.subject_ra_mean.chunks(jn).map(|c| c.to_vec()).collect();
    let truths: Vec<Vec<f64>> = data
        .records()
        .iter()
        .map(|rec| truth.subject_composition(rec.individual, rec.time, &rec.x))
        .collect();
    Ok(mean_aitchison(&estimates, &truths))
}

pub fn summarize_scores(
    seed: u64,
    pairs: &[PairScore],
    mead: f64,
    n_taxa: usize,
    runtime_seconds: f64,
) -> ScoreSummary {
    let pick = |active: bool, f: fn(&PairScore) -> f64| {
        mean_of(pairs.iter().filter(|p| p.active == active).map(f))
    };
    ScoreSummary {
        seed,
        n_taxa,
        mead,
        active_ra95: pick(true, |p| p.ra95),
        active_b95: pick(true, |p| p.b95),
        active_armse: pick(true, |p| p.armse),
        inactive_ra95: pick(false, |p| p.ra95),
        inactive_b95: pick(false, |p| p.b95),
        inactive_armse: pick(false, |p| p.armse),
        runtime_seconds,
    }
}

/// Writes summaries in the shape of the usual results table: one row per
/// replication followed by a `mean` row.
pub fn write_score_table(path: &Path, rows: &[ScoreSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "n_taxa",
        "MeAD",
        "active_RA95",
        "active_B95",
        "active_ARMSE",
        "inactive_RA95",
        "inactive_B95",
        "inactive_ARMSE",
        "runtime_seconds",
    ])?;
    let fmt = |v: f64| format!("{v:.4}");
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.n_taxa.to_string(),
            fmt(r.mead),
            fmt(r.active_ra95),
            fmt(r.active_b95),
            fmt(r.active_armse),
            fmt(r.inactive_ra95),
            fmt(r.inactive_b95),
            fmt(r.inactive_armse),
            format!("{:.2}", r.runtime_seconds),
        ])?;
    }
    if rows.len() > 1 {
        let m = |f: fn(&ScoreSummary) -> f64| fmt(mean_of(rows.iter().map(f)));
        w.write_record([
            "mean".to_string(),
            rows[0].n_taxa.to_string(),
            m(|r| r.mead),
            m(|r| r.active_ra95),
            m(|r| r.active_b95),
            m(|r| r.active_armse),
            m(|r| r.inactive_ra95),
            m(|r| r.inactive_b95),
            m(|r| r.inactive_armse),
            format!("{:.2}", mean_of(rows.iter().map(|r| r.runtime_seconds))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pair_scores(path: &Path, pairs: &[PairScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the dataset in the long CSV layout read by the ingestion code:
/// `id, time, covariates..., counts...`.
pub fn write_dataset_csv(path: &Path, data: &LongitudinalDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend(data.covariates().iter().map(|c| c.name.clone()));
    header.extend(data.taxon_names().iter().cloned());
    w.write_record(&header)?;
    for rec in data.records() {
        let mut row = vec![data.individual_ids()[rec.individual].clone(), rec.time.to_string()];
        row.extend(rec.x.iter().map(|v| v.to_string()));
        row.extend(rec.counts.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
