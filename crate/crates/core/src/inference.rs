//! Population- and subject-level summaries over posterior draws.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{quantile_sorted, SplineBasis};
use crate::error::{Error, Result};
use crate::model::{CoefficientLayout, CovariateProfile, LongitudinalDataset};
use crate::sampler::geweke::sample_multinomial;
use crate::sampler::random::sample_log_gamma;
use crate::sampler::{Draw, PosteriorDraws};

/// `log` of the unnormalized relative abundances:
/// `beta_j0(t) + x(t) . beta_j(t)` for every taxon.
pub fn linear_predictors(
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    beta: &[f64],
    t: f64,
    x: &[f64],
) -> Vec<f64> {
    let row = basis.evaluate(t);
    predictors_at_row(layout, &row, beta, x)
}

fn predictors_at_row(layout: &CoefficientLayout, row: &[f64], beta: &[f64], x: &[f64]) -> Vec<f64> {
    let stride = layout.stride();
    (0..layout.n_taxa())
        .map(|j| {
            let coefs = &beta[j * stride..(j + 1) * stride];
            let mut v = layout.coefficient_at(coefs, 0, row);
            for (p, xp) in x.iter().enumerate() {
                if *xp != 0.0 {
                    v += layout.coefficient_at(coefs, p + 1, row) * xp;
                }
            }
            v
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Coefficient function `beta_jp(t)`; `p = 0` is the intercept.
pub fn coefficient(
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    beta: &[f64],
    j: usize,
    p: usize,
    t: f64,
) -> f64 {
    let stride = layout.stride();
    let row = basis.evaluate(t);
    layout.coefficient_at(&beta[j * stride..(j + 1) * stride], p, &row)
}

/// Population-level relative abundance at time `t` for covariate profile
/// `x(t)`; random intercepts are excluded.
pub fn relative_abundance(
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    beta: &[f64],
    t: f64,
    profile: &CovariateProfile,
) -> Vec<f64> {
    softmax(&linear_predictors(layout, basis, beta, t, &profile.at(t)))
}

fn check_covariate(layout: &CoefficientLayout, p: usize) -> Result<()> {
    if p == 0 || p > layout.n_covariates() {
        return Err(Error::InvalidConfig(format!(
            "covariate index {p} outside 1..={}",
            layout.n_covariates()
        )));
    }
    Ok(())
}

/// Multiplicative difference in relative abundance for a `v`-unit increase
/// of covariate `p` (1-based) from the profile.
///
/// The intercepts are kept inside both sums, so the result is exactly the
/// ratio of the relative abundances at the shifted and base profiles.
pub fn delta_ra(
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    beta: &[f64],
    t: f64,
    profile: &CovariateProfile,
    p: usize,
    v: f64,
) -> Result<Vec<f64>> {
    check_covariate(layout, p)?;
    let row = basis.evaluate(t);
    let base = predictors_at_row(layout, &row, beta, &profile.at(t));
    let stride = layout.stride();
    let shift: Vec<f64> = (0..layout.n_taxa())
        .map(|j| v * layout.coefficient_at(&beta[j * stride..(j + 1) * stride], p, &row))
        .collect();
    let max = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom_base: f64 = base.iter().map(|b| (b - max).exp()).sum();
    let shifted_max = base
        .iter()
        .zip(&shift)
        .map(|(b, s)| b + s)
        .fold(f64::NEG_INFINITY, f64::max);
    let denom_shift: f64 = base
        .iter()
        .zip(&shift)
        .map(|(b, s)| (b + s - shifted_max).exp())
        .sum();
    // exp(v beta_jp) * sum exp(base) / sum exp(base + shift)
    let log_ratio = (max - shifted_max) + denom_base.ln() - denom_shift.ln();
    Ok(shift.iter().map(|s| (s + log_ratio).exp()).collect())
}

/// Hill diversity of order `l`: `(sum_j psi_j^(1 - l))^(1/l)`, with the
/// Shannon limit `exp(-sum psi log psi)` at `l = 0`.
pub fn hill_diversity(psi: &[f64], l: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&l) {
        return Err(Error::InvalidDiversityOrder(l));
    }
    if l == 0.0 {
        let h: f64 = psi
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        return Ok(h.exp());
    }
    let s: f64 = psi.iter().map(|&p| p.powf(1.0 - l)).sum();
    Ok(s.powf(1.0 / l))
}

/// Profile with covariate `p` (1-based) shifted by `v`.
pub fn shifted_profile(profile: &CovariateProfile, p: usize, v: f64) -> CovariateProfile {
    let mut out = profile.clone();
    let curve = &mut out.curves[p - 1];
    *curve = match curve {
        crate::model::ProfileCurve::Constant(c) => crate::model::ProfileCurve::Constant(*c + v),
        crate::model::ProfileCurve::Linear { times, values } => crate::model::ProfileCurve::Linear {
            times: times.clone(),
            values: values.iter().map(|x| x + v).collect(),
        },
    };
    out
}

/// Multiplicative difference in Hill diversity for a `v`-unit increase of
/// covariate `p`.
#[allow(clippy::too_many_arguments)]
pub fn delta_diversity(
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    beta: &[f64],
    t: f64,
    profile: &CovariateProfile,
    p: usize,
    v: f64,
    l: f64,
) -> Result<f64> {
    check_covariate(layout, p)?;
    let base = relative_abundance(layout, basis, beta, t, profile);
    let moved = relative_abundance(layout, basis, beta, t, &shifted_profile(profile, p, v));
    Ok(hill_diversity(&moved, l)? / hill_diversity(&base, l)?)
}

/// Subject-level composition `gamma_ij(t) / sum_k gamma_ik(t)` for record
/// `record`, using the draw's random intercepts and ignoring `eta`.
pub fn subject_composition(
    draws: &PosteriorDraws,
    draw: &Draw,
    data: &LongitudinalDataset,
    record: usize,
) -> Result<Vec<f64>> {
    let r = draw
        .r
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("draws were stored without subject parameters".into()))?;
    let rec = data.record(record);
    let jn = data.n_taxa();
    let mut lp = linear_predictors(draws.layout(), draws.basis(), &draw.beta, rec.time, &rec.x);
    for (j, v) in lp.iter_mut().enumerate() {
        *v += r[rec.individual * jn + j];
    }
    Ok(softmax(&lp))
}

/// Quantity evaluated along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantity {
    /// `beta_jp(t)`; `covariate = 0` is the intercept.
    Beta { taxon: usize, covariate: usize },
    Ra { taxon: usize },
    DeltaRa { taxon: usize, covariate: usize, v: f64 },
    DeltaDiv { covariate: usize, v: f64, l: f64 },
}

impl Quantity {
    pub fn label(&self, taxa: &[String], covariates: &[String]) -> String {
        let cov = |p: usize| {
            if p == 0 {
                "intercept".to_string()
            } else {
                covariates.get(p - 1).cloned().unwrap_or_else(|| format!("x{p}"))
            }
        };
        let taxon = |j: usize| taxa.get(j).cloned().unwrap_or_else(|| format!("taxon{j}"));
        match self {
            Quantity::Beta { taxon: j, covariate } => format!("beta[{}, {}]", taxon(*j), cov(*covariate)),
            Quantity::Ra { taxon: j } => format!("RA[{}]", taxon(*j)),
            Quantity::DeltaRa { taxon: j, covariate, v } => {
                format!("deltaRA[{}, {}, v={v}]", taxon(*j), cov(*covariate))
            }
            Quantity::DeltaDiv { covariate, v, l } => {
                format!("deltaDiv[{}, v={v}, l={l}]", cov(*covariate))
            }
        }
    }

    fn validate(&self, layout: &CoefficientLayout) -> Result<()> {
        let taxa = layout.n_taxa();
        let bad_taxon = |j: usize| {
            (j >= taxa).then(|| Error::InvalidConfig(format!("taxon index {j} outside 0..{taxa}")))
        };
        match *self {
            Quantity::Beta { taxon, covariate } => {
                if let Some(e) = bad_taxon(taxon) {
                    return Err(e);
                }
                if covariate > layout.n_covariates() {
                    return Err(Error::InvalidConfig(format!("covariate index {covariate} too large")));
                }
            }
            Quantity::Ra { taxon } => {
                if let Some(e) = bad_taxon(taxon) {
                    return Err(e);
                }
            }
            Quantity::DeltaRa { taxon, covariate, .. } => {
                if let Some(e) = bad_taxon(taxon) {
                    return Err(e);
                }
                check_covariate(layout, covariate)?;
            }
            Quantity::DeltaDiv { covariate, l, .. } => {
                check_covariate(layout, covariate)?;
                if !(0.0..1.0).contains(&l) {
                    return Err(Error::InvalidDiversityOrder(l));
                }
            }
        }
        Ok(())
    }

    /// Value for one draw at time `t`.
    pub fn evaluate(
        &self,
        layout: &CoefficientLayout,
        basis: &SplineBasis,
        beta: &[f64],
        t: f64,
        profile: &CovariateProfile,
    ) -> Result<f64> {
        Ok(match *self {
            Quantity::Beta { taxon, covariate } => coefficient(layout, basis, beta, taxon, covariate, t),
            Quantity::Ra { taxon } => relative_abundance(layout, basis, beta, t, profile)[taxon],
            Quantity::DeltaRa { taxon, covariate, v } => {
                delta_ra(layout, basis, beta, t, profile, covariate, v)?[taxon]
            }
            Quantity::DeltaDiv { covariate, v, l } => {
                delta_diversity(layout, basis, beta, t, profile, covariate, v, l)?
            }
        })
    }
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Draw-by-grid matrix of a quantity: `out[s][g]`.
pub fn evaluate_curves(
    draws: &PosteriorDraws,
    quantity: &Quantity,
    profile: &CovariateProfile,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let layout = draws.layout();
    quantity.validate(layout)?;
    profile.validate(layout.n_covariates())?;
    draws
        .draws
        .iter()
        .map(|d| {
            grid.iter()
                .map(|&t| quantity.evaluate(layout, draws.basis(), &d.beta, t, profile))
                .collect()
        })
        .collect()
}

/// Pointwise posterior mean and equal-tailed credible band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub label: String,
    pub level: f64,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Type-7 quantile of unsorted values.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

/// Summarizes a draw-by-grid matrix with the `(1 - level)/2` and
/// `(1 + level)/2` quantiles.
pub fn summarize_function(
    samples: &[Vec<f64>],
    grid: &[f64],
    level: f64,
    label: impl Into<String>,
) -> Result<FunctionalSummary> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no draws to summarize".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("credible level {level} outside (0, 1)")));
    }
    let s = samples.len() as f64;
    let (lo, hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut out = FunctionalSummary {
        label: label.into(),
        level,
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
    };
    for g in 0..grid.len() {
        let mut col: Vec<f64> = samples.iter().map(|row| row[g]).collect();
        let mean = col.iter().sum::<f64>() / s;
        col.sort_by(f64::total_cmp);
        let lower = quantile_sorted(&col, lo);
        let upper = quantile_sorted(&col, hi);
        // floating-point sums can put the mean a rounding step outside
        out.mean.push(mean.clamp(lower, upper));
        out.lower.push(lower);
        out.upper.push(upper);
    }
    Ok(out)
}

impl FunctionalSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["label", "t", "mean", "lower", "upper"])?;
        for k in 0..self.grid.len() {
            w.write_record([
                self.label.clone(),
                self.grid[k].to_string(),
                self.mean[k].to_string(),
                self.lower[k].to_string(),
                self.upper[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, level: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = FunctionalSummary {
            label: String::new(),
            level,
            grid: Vec::new(),
            mean: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for row in r.deserialize() {
            let (label, t, mean, lower, upper): (String, f64, f64, f64, f64) = row?;
            out.label = label;
            out.grid.push(t);
            out.mean.push(mean);
            out.lower.push(lower);
            out.upper.push(upper);
        }
        Ok(out)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Posterior-mean surface over a time grid and a grid of covariate shifts
/// `v`, as used for heatmaps. `values[k][g]` belongs to `v_grid[k]` and
/// `times[g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub label: String,
    pub times: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Posterior mean of a `DeltaRa` or `DeltaDiv` quantity over `times x
/// v_grid`; the `v` stored in `quantity` is replaced by the grid values.
pub fn heatmap(
    draws: &PosteriorDraws,
    quantity: &Quantity,
    profile: &CovariateProfile,
    times: &[f64],
    v_grid: &[f64],
) -> Result<Heatmap> {
    if draws.is_empty() {
        return Err(Error::InvalidConfig("no draws for heatmap".into()));
    }
    let mut values = Vec::with_capacity(v_grid.len());
    for &v in v_grid {
        let q = match quantity.clone() {
            Quantity::DeltaRa { taxon, covariate, .. } => Quantity::DeltaRa { taxon, covariate, v },
            Quantity::DeltaDiv { covariate, l, .. } => Quantity::DeltaDiv { covariate, v, l },
            _ => {
                return Err(Error::InvalidConfig(
                    "heatmaps are defined for deltaRA and deltaDiv".into(),
                ))
            }
        };
        let curves = evaluate_curves(draws, &q, profile, times)?;
        let s = curves.len() as f64;
        values.push(
            (0..times.len())
                .map(|g| curves.iter().map(|c| c[g]).sum::<f64>() / s)
                .collect(),
        );
    }
    Ok(Heatmap {
        label: quantity.label(&draws.meta.taxon_names, &draws.meta.covariate_names),
        times: times.to_vec(),
        v_grid: v_grid.to_vec(),
        values,
    })
}

impl Heatmap {
    /// Long-format CSV: `v, t, value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["v", "t", "value"])?;
        for (k, v) in self.v_grid.iter().enumerate() {
            for (g, t) in self.times.iter().enumerate() {
                w.write_record([v.to_string(), t.to_string(), self.values[k][g].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Posterior predictive check statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub taxa: Vec<String>,
    pub n_replicates: usize,
    /// Mean observed relative abundance per taxon.
    pub observed_mean_ra: Vec<f64>,
    /// Replicated mean relative abundance averaged over draws.
    pub replicated_mean_ra: Vec<f64>,
    /// `P(T_rep >= T_obs)` for the mean relative abundance, with ties
    /// counted half.
    pub mean_ra_p_value: Vec<f64>,
    /// Row-major `J x J` covariance of observed relative abundances.
    pub observed_cov: Vec<f64>,
    pub replicated_cov: Vec<f64>,
    pub cov_p_value: Vec<f64>,
}

fn ra_stats(counts: &[Vec<u32>], jn: usize) -> (Vec<f64>, Vec<f64>) {
    let n = counts.len() as f64;
    let ras: Vec<Vec<f64>> = counts
        .iter()
        .map(|z| {
            let tot: f64 = z.iter().map(|&v| f64::from(v)).sum();
            z.iter().map(|&v| f64::from(v) / tot).collect()
        })
        .collect();
    let mean: Vec<f64> = (0..jn).map(|j| ras.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; jn * jn];
    for r in &ras {
        for a in 0..jn {
            for b in 0..jn {
                cov[a * jn + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    cov.iter_mut().for_each(|c| *c /= denom);
    (mean, cov)
}

/// Replicated count tables, one per retained draw, drawn from the
/// subject-level model with each record's observed total.
pub fn replicate_counts(
    draws: &PosteriorDraws,
    data: &LongitudinalDataset,
    seed: u64,
) -> Result<Vec<Vec<Vec<u32>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jn = data.n_taxa();
    let mut out = Vec::with_capacity(draws.len());
    for draw in &draws.draws {
        let (Some(r), Some(eta)) = (&draw.r, &draw.eta) else {
            return Err(Error::InvalidConfig(
                "posterior predictive checks need stored subject parameters".into(),
            ));
        };
        let mut table = Vec::with_capacity(data.n_records());
        for rec in data.records() {
            let lp = linear_predictors(draws.layout(), draws.basis(), &draw.beta, rec.time, &rec.x);
            let mut log_c = vec![f64::NEG_INFINITY; jn];
            for j in 0..jn {
                if eta[rec.individual * jn + j] {
                    let g = (lp[j] + r[rec.individual * jn + j]).exp();
                    log_c[j] = sample_log_gamma(g, 1.0, &mut rng);
                }
            }
            let psi = softmax(&log_c);
            table.push(sample_multinomial(rec.total(), &psi, &mut rng));
        }
        out.push(table);
    }
    Ok(out)
}

pub fn posterior_predictive(
    draws: &PosteriorDraws,
    data: &LongitudinalDataset,
    seed: u64,
) -> Result<PpcReport> {
    if draws.is_empty() {
        return Err(Error::InvalidConfig("no draws for predictive checks".into()));
    }
    let jn = data.n_taxa();
    let observed: Vec<Vec<u32>> = data.records().iter().map(|r| r.counts.clone()).collect();
    let (obs_mean, obs_cov) = ra_stats(&observed, jn);
    let reps = replicate_counts(draws, data, seed)?;
    let s = reps.len() as f64;
    let mut rep_mean = vec![0.0; jn];
    let mut rep_cov = vec![0.0; jn * jn];
    let mut p_mean = vec![0.0; jn];
    let mut p_cov = vec![0.0; jn * jn];
    let exceed = |rep: f64, obs: f64| {
        if rep > obs {
            1.0
        } else if rep == obs {
            0.5
        } else {
            0.0
        }
    };
    for table in &reps {
        let (m, c) = ra_stats(table, jn);
        for j in 0..jn {
            rep_mean[j] += m[j] / s;
            p_mean[j] += exceed(m[j], obs_mean[j]) / s;
        }
        for k in 0..jn * jn {
            rep_cov[k] += c[k] / s;
            p_cov[k] += exceed(c[k], obs_cov[k]) / s;
        }
    }
    Ok(PpcReport {
        taxa: data.taxon_names().to_vec(),
        n_replicates: reps.len(),
        observed_mean_ra: obs_mean,
        replicated_mean_ra: rep_mean,
        mean_ra_p_value: p_mean,
        observed_cov: obs_cov,
        replicated_cov: rep_cov,
        cov_p_value: p_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientKind, ProfileCurve};

    fn layout(j: usize, p: usize) -> CoefficientLayout {
        CoefficientLayout::new(j, 5, vec![CoefficientKind::Functional; p])
    }

    fn basis() -> SplineBasis {
        SplineBasis::from_knots(4, vec![5.0], (0.0, 10.0)).unwrap()
    }

    /// Coefficients making `beta_jp(t)` the constant `value`.
    fn set_constant(beta: &mut [f64], layout: &CoefficientLayout, j: usize, p: usize, value: f64) {
        let start = j * layout.stride() + layout.block_range(p).start;
        beta[start] = value;
    }

    #[test]
    fn zero_coefficients_give_uniform_abundance() {
        let l = layout(4, 1);
        let beta = vec![0.0; 4 * l.stride()];
        let ra = relative_abundance(&l, &basis(), &beta, 3.0, &CovariateProfile::reference(1));
        for v in ra {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_taxon_closed_forms() {
        let l = layout(2, 1);
        let mut beta = vec![0.0; 2 * l.stride()];
        set_constant(&mut beta, &l, 0, 0, 3f64.ln());
        let ra = relative_abundance(&l, &basis(), &beta, 7.0, &CovariateProfile::reference(1));
        assert!((ra[0] - 0.75).abs() < 1e-15 && (ra[1] - 0.25).abs() < 1e-15);

        let mut beta = vec![0.0; 2 * l.stride()];
        set_constant(&mut beta, &l, 0, 1, 2f64.ln());
        let d = delta_ra(&l, &basis(), &beta, 4.0, &CovariateProfile::reference(1), 1, 1.0).unwrap();
        assert!((d[0] - 4.0 / 3.0).abs() < 1e-14);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-14);
        // composing with diversity: base (1/2, 1/2) -> shifted (2/3, 1/3)
        let l_order = 0.75;
        let shifted: f64 = (2f64 / 3.0).powf(0.25) + (1f64 / 3.0).powf(0.25);
        let expect = shifted.powf(1.0 / l_order) / 2.0;
        let dd = delta_diversity(&l, &basis(), &beta, 4.0, &CovariateProfile::reference(1), 1, 1.0, l_order)
            .unwrap();
        assert!((dd - expect).abs() < 1e-14);
    }

    #[test]
    fn null_shift_and_null_covariate_give_ones() {
        let l = layout(3, 2);
        let beta: Vec<f64> = (0..3 * l.stride()).map(|k| ((k * 37) % 11) as f64 / 10.0 - 0.5).collect();
        let prof = CovariateProfile::constant("p", &[0.3, -1.0]);
        let d = delta_ra(&l, &basis(), &beta, 2.0, &prof, 1, 0.0).unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let mut nulled = beta.clone();
        for j in 0..3 {
            let base = j * l.stride();
            for k in l.block_range(2) {
                nulled[base + k] = 0.0;
            }
        }
        let d = delta_ra(&l, &basis(), &nulled, 2.0, &prof, 2, 2.5).unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!((delta_diversity(&l, &basis(), &beta, 2.0, &prof, 1, 0.0, 0.75).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hill_diversity_cases() {
        assert!((hill_diversity(&[0.25; 4], 0.75).unwrap() - 4.0).abs() < 1e-12);
        assert!((hill_diversity(&[0.25; 4], 0.3).unwrap() - 4.0).abs() < 1e-12);
        let eps = 1e-40;
        let mut psi = vec![eps; 5];
        psi[0] = 1.0 - 4.0 * eps;
        let d = hill_diversity(&psi, 0.75).unwrap();
        assert!(d >= 1.0 && d - 1.0 < 1e-6);
        let shannon = hill_diversity(&[0.5, 0.25, 0.25], 0.0).unwrap();
        assert!((shannon - (1.5 * 2f64.ln()).exp()).abs() < 1e-12);
        assert!((shannon - 2.8284).abs() < 1e-4);
        assert!(matches!(hill_diversity(&[0.5, 0.5], 1.0), Err(Error::InvalidDiversityOrder(_))));
    }

    #[test]
    fn summary_of_constant_draws_has_zero_width() {
        let samples = vec![vec![2.0, -1.0]; 30];
        let s = summarize_function(&samples, &[0.0, 1.0], 0.95, "c").unwrap();
        assert_eq!(s.lower, vec![2.0, -1.0]);
        assert_eq!(s.upper, vec![2.0, -1.0]);
        assert_eq!(s.mean, vec![2.0, -1.0]);
    }

    #[test]
    fn summary_quantiles_match_sort_oracle() {
        let samples: Vec<Vec<f64>> = (0..101).map(|k| vec![((k * 53) % 101) as f64]).collect();
        let s = summarize_function(&samples, &[0.0], 0.95, "q").unwrap();
        // sorted values are 0..=100, type-7 positions 2.5 and 97.5
        assert!((s.lower[0] - 2.5).abs() < 1e-12);
        assert!((s.upper[0] - 97.5).abs() < 1e-12);
        assert!((s.mean[0] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_profile_moves_only_one_covariate() {
        let prof = CovariateProfile {
            label: "x".into(),
            curves: vec![
                ProfileCurve::Constant(1.0),
                ProfileCurve::Linear {
                    times: vec![0.0, 10.0],
                    values: vec![0.0, 1.0],
                },
            ],
        };
        let s = shifted_profile(&prof, 2, 2.0);
        assert_eq!(s.at(5.0), vec![1.0, 2.5]);
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 10.0, 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 10.0);
        assert!((g[37] - 3.7).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn draw(j: usize) -> impl Strategy<Value = Vec<f64>> {
            let stride = layout(j, 1).stride();
            proptest::collection::vec(-3.0..3.0f64, j * stride)
        }

        proptest! {
            #[test]
            fn abundance_ratios_average_to_one(
                beta in draw(6),
                t in 0.0..10.0f64,
                v in -2.0..2.0f64,
            ) {
                let l = layout(6, 1);
                let prof = CovariateProfile::reference(1);
                let psi = relative_abundance(&l, &basis(), &beta, t, &prof);
                let d = delta_ra(&l, &basis(), &beta, t, &prof, 1, v).unwrap();
                let avg: f64 = psi.iter().zip(&d).map(|(p, d)| p * d).sum();
                prop_assert!((avg - 1.0).abs() < 1e-10);
                // a taxon gaining share forces another to lose share
                if d.iter().any(|&x| x > 1.0 + 1e-9) {
                    prop_assert!(d.iter().any(|&x| x < 1.0));
                }
            }

            #[test]
            fn hill_diversity_lies_between_one_and_richness(
                raw in proptest::collection::vec(1e-6..1.0f64, 1..12),
                l in 0.0..0.99f64,
            ) {
                let s: f64 = raw.iter().sum();
                let psi: Vec<f64> = raw.iter().map(|x| x / s).collect();
                let h = hill_diversity(&psi, l).unwrap();
                prop_assert!(h >= 1.0 - 1e-9 && h <= psi.len() as f64 + 1e-9, "{h}");
            }
        }
    }
}
