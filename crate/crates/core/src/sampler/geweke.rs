//! Joint-distribution simulators for "getting it right" checks.
//!
//! The marginal-conditional simulator draws parameters from the prior and
//! data given parameters; the successive-conditional simulator alternates
//! one sampler sweep with regenerating the counts from the current latents.
//! Both target the same joint, so any functional of the parameters must
//! have matching moments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, StandardNormal};

use super::random::{sample_gamma, sample_inv_gamma, sample_log_gamma};
use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{
    shrinkage_variance, CoefficientLayout, Design, Hyperparameters, LongitudinalDataset,
    ParameterState, Record,
};

/// `Multinomial(n, probs)` by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u32> {
    let mut out = vec![0u32; probs.len()];
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() || p >= mass {
            out[k] = left as u32;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[k] = draw as u32;
        left -= draw;
        mass -= p;
    }
    out
}

/// Draws every parameter from the prior, then the latents given them. The
/// at-risk indicators follow the beta-binomial prior truncated so that each
/// individual keeps at least one at-risk taxon.
pub fn sample_prior_state(
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
    rng: &mut ChaCha8Rng,
) -> ParameterState {
    let layout = CoefficientLayout::for_data(data, basis);
    let design = Design::new(data, basis, &layout);
    let mut state = ParameterState::zeros(data, &layout);
    let (n, jn) = (data.n_individuals(), data.n_taxa());
    let blocks = layout.n_blocks();
    for j in 0..jn {
        state.xi[j] = sample_inv_gamma(0.5, 1.0, rng);
        state.tau2[j] = sample_inv_gamma(0.5, 1.0 / state.xi[j], rng);
        state.kappa2[j] = 1.0 / sample_gamma(hyper.zeta, hyper.rho, rng);
        state.phi2[j] = 1.0 / sample_gamma(hyper.a, hyper.b, rng);
        for p in 0..blocks {
            let slot = j * blocks + p;
            state.nu[slot] = sample_inv_gamma(0.5, 1.0, rng);
            state.lambda2[slot] = sample_inv_gamma(0.5, 1.0 / state.nu[slot], rng);
            let sd = shrinkage_variance(state.kappa2[j], state.lambda2[slot], state.tau2[j]).sqrt();
            let shrunk = layout.shrunk_range(p);
            let block = state.block_mut(&layout, j, p);
            for (d, b) in block.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *b = if shrunk.contains(&d) { sd * z } else { z };
            }
        }
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            state.r[i * jn + j] = state.phi2[j].sqrt() * z;
        }
    }
    let beta = Beta::new(hyper.alpha, hyper.beta).expect("valid beta prior");
    loop {
        for j in 0..jn {
            let theta = beta.sample(rng);
            for i in 0..n {
                state.eta[i * jn + j] = rng.random::<f64>() < theta;
            }
        }
        if (0..n).all(|i| (0..jn).any(|j| state.eta[i * jn + j])) {
            break;
        }
    }
    for (k, rec) in data.records().iter().enumerate() {
        let mut total = 0.0;
        for j in 0..jn {
            let cell = k * jn + j;
            if state.eta[rec.individual * jn + j] {
                let lg: f64 = design
                    .row(k)
                    .iter()
                    .zip(state.taxon_coefs(&layout, j))
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

/// A copy of `data` whose counts are redrawn as `Multinomial(z., c / T)`
/// from the latents in `state`, keeping every record's total.
pub fn regenerate_counts(
    data: &LongitudinalDataset,
    state: &ParameterState,
    rng: &mut ChaCha8Rng,
) -> Result<LongitudinalDataset> {
    let records: Vec<Record> = data
        .records()
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            let psi = state.psi(k);
            Record {
                counts: sample_multinomial(rec.total(), &psi, rng),
                ..rec.clone()
            }
        })
        .collect();
    LongitudinalDataset::new(
        data.individual_ids().to_vec(),
        data.taxon_names().to_vec(),
        data.covariates().to_vec(),
        records,
    )
}

/// Batch-means z-score for the difference in means of two series.
pub fn batch_means_z(a: &[f64], b: &[f64], batches: usize) -> Result<f64> {
    fn mean_and_var(x: &[f64], batches: usize) -> Result<(f64, f64)> {
        let size = x.len() / batches;
        if size < 2 {
            return Err(Error::InvalidConfig("too few samples per batch".into()));
        }
        let means: Vec<f64> = x
            .chunks_exact(size)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let v = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        Ok((m, v / batches as f64))
    }
    let (ma, va) = mean_and_var(a, batches)?;
    let (mb, vb) = mean_and_var(b, batches)?;
    Ok((ma - mb) / (va + vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn multinomial_preserves_total_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = [0.2, 0.0, 0.5, 0.3];
        let mut acc = [0.0; 4];
        let reps = 20_000;
        for _ in 0..reps {
            let z = sample_multinomial(10, &probs, &mut rng);
            assert_eq!(z.iter().sum::<u32>(), 10);
            assert_eq!(z[1], 0);
            for (a, v) in acc.iter_mut().zip(&z) {
                *a += f64::from(*v);
            }
        }
        for (a, p) in acc.iter().zip(probs) {
            let mean = a / reps as f64;
            let sd = (10.0 * p * (1.0 - p) / reps as f64).sqrt();
            assert!((mean - 10.0 * p).abs() <= 4.0 * sd + 1e-12);
        }
    }

    #[test]
    fn batch_z_of_identical_streams_is_zero() {
        let a: Vec<f64> = (0..1000).map(|k| (k % 17) as f64).collect();
        assert_eq!(batch_means_z(&a, &a, 20).unwrap(), 0.0);
    }
}
