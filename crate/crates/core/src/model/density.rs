//! Density kernels and the augmented log-joint.
//!
//! The multinomial likelihood is augmented with one latent `u` per record:
//! `T^{-z.} = Gamma(z.)^{-1} \int u^{z. - 1} e^{-uT} du`. Conditional on
//! `u`, the latent gamma variables `c` are independent, which gives the
//! conjugate updates used by the sampler.

use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use super::data::LongitudinalDataset;
use super::hyper::Hyperparameters;
use super::state::{CoefficientLayout, ParameterState};
use crate::basis::SplineBasis;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Regularized horseshoe variance `k2 l2 t2 / (k2 + l2 t2)`.
pub fn shrinkage_variance(kappa2: f64, lambda2: f64, tau2: f64) -> f64 {
    let lt = lambda2 * tau2;
    kappa2 * lt / (kappa2 + lt)
}

pub fn log_normal(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - x * x / (2.0 * var)
}

/// Gamma density with shape/rate parameters.
pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Inverse-gamma density with shape/scale parameters.
pub fn log_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Density of a variance `v` whose precision `1/v` is `Gamma(shape, rate)`.
pub fn log_variance_prior(v: f64, shape: f64, rate: f64) -> f64 {
    log_gamma_pdf(1.0 / v, shape, rate) - 2.0 * v.ln()
}

/// Beta-binomial probability of one specific at-risk column with
/// `n_at_risk` ones among `n`, the at-risk probability integrated out.
pub fn log_beta_binomial_column(n_at_risk: usize, n: usize, alpha: f64, beta: f64) -> f64 {
    let ones = n_at_risk as f64;
    let zeros = (n - n_at_risk) as f64;
    ln_beta(alpha + ones, beta + zeros) - ln_beta(alpha, beta)
}

/// Makalic-Schmidt augmented half-Cauchy prior on a squared scale:
/// `s2 | aux ~ IG(1/2, 1/aux)`, `aux ~ IG(1/2, 1)`.
pub fn log_half_cauchy_aux(scale2: f64, aux: f64) -> f64 {
    log_inv_gamma_pdf(scale2, 0.5, 1.0 / aux) + log_inv_gamma_pdf(aux, 0.5, 1.0)
}

/// `log gamma_ij(t)` for record `record` and taxon `j`.
pub fn log_concentration(
    state: &ParameterState,
    layout: &CoefficientLayout,
    basis: &SplineBasis,
    data: &LongitudinalDataset,
    record: usize,
    j: usize,
) -> Result<f64> {
    let rec = data.record(record);
    let row = basis.evaluate(rec.time);
    let coefs = state.taxon_coefs(layout, j);
    let mut value = layout.coefficient_at(coefs, 0, &row);
    for p in 1..layout.n_blocks() {
        value += layout.coefficient_at(coefs, p, &row) * rec.x[p - 1];
    }
    value += state.r[rec.individual * layout.n_taxa() + j];
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteConcentration { record, taxon: j })
    }
}

/// Log prior of one coefficient block.
pub fn log_block_prior(
    block: &[f64],
    layout: &CoefficientLayout,
    p: usize,
    lambda2: f64,
    tau2: f64,
    kappa2: f64,
) -> f64 {
    let var = shrinkage_variance(kappa2, lambda2, tau2);
    let mut lp: f64 = layout.shrunk_range(p).map(|d| log_normal(block[d], var)).sum();
    if p == 0 {
        lp += log_normal(block[0], 1.0);
    }
    lp
}

/// Concentration term of an at-risk cell: `log Gamma(c; gamma, 1)`
/// expressed through `log c` and `log gamma`.
#[inline]
pub fn log_concentration_term(log_gamma: f64, log_c: f64) -> f64 {
    let gamma = log_gamma.exp();
    (gamma - 1.0) * log_c - log_c.exp() - ln_gamma(gamma)
}

/// The augmented log-joint split into its additive pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct LogJointTerms {
    /// Per record: `(z. - 1) log u - u T + sum_j z_j log c_j`.
    pub record: Vec<f64>,
    /// Per (record, taxon): gamma density of `c`, zero for structural cells.
    pub concentration: Vec<f64>,
    /// Per taxon: beta-binomial column prior of `eta`.
    pub at_risk: Vec<f64>,
    /// Per taxon: normal priors of the spline coefficients.
    pub coefficient_prior: Vec<f64>,
    /// Per (individual, taxon): normal prior of `r`.
    pub random_effect_prior: Vec<f64>,
    /// Per taxon: augmented half-Cauchy priors of `lambda^2` and `tau^2`.
    pub shrinkage_prior: Vec<f64>,
    /// Per taxon: prior of `kappa^2`.
    pub slab_prior: Vec<f64>,
    /// Per taxon: prior of `phi^2`.
    pub variance_prior: Vec<f64>,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        [
            &self.record,
            &self.concentration,
            &self.at_risk,
            &self.coefficient_prior,
            &self.random_effect_prior,
            &self.shrinkage_prior,
            &self.slab_prior,
            &self.variance_prior,
        ]
        .iter()
        .map(|v| v.iter().sum::<f64>())
        .sum()
    }

    pub fn likelihood(&self) -> f64 {
        self.record.iter().sum::<f64>() + self.concentration.iter().sum::<f64>()
    }
}

/// Computes every term of the augmented log-joint from scratch.
pub fn log_joint_terms(
    state: &ParameterState,
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
) -> Result<LogJointTerms> {
    let layout = CoefficientLayout::for_data(data, basis);
    let (n, jn) = (data.n_individuals(), data.n_taxa());
    for i in 0..n {
        for j in 0..jn {
            if !state.eta[i * jn + j] && !data.all_zero(i, j) {
                return Err(Error::StructuralZeroWithCounts {
                    individual: i,
                    taxon: j,
                });
            }
        }
    }

    let mut record = Vec::with_capacity(data.n_records());
    let mut concentration = vec![0.0; data.n_records() * jn];
    for (k, rec) in data.records().iter().enumerate() {
        let total_count = rec.total() as f64;
        let u = state.u[k];
        let mut term = (total_count - 1.0) * u.ln() - u * state.total(k);
        for j in 0..jn {
            if !state.eta[rec.individual * jn + j] {
                continue;
            }
            let lc = state.log_c[k * jn + j];
            term += f64::from(rec.counts[j]) * lc;
            let lg = log_concentration(state, &layout, basis, data, k, j)?;
            concentration[k * jn + j] = log_concentration_term(lg, lc);
        }
        record.push(term);
    }

    let at_risk = (0..jn)
        .map(|j| {
            let ones = (0..n).filter(|&i| state.eta[i * jn + j]).count();
            log_beta_binomial_column(ones, n, hyper.alpha, hyper.beta)
        })
        .collect();

    let blocks = layout.n_blocks();
    let coefficient_prior = (0..jn)
        .map(|j| {
            (0..blocks)
                .map(|p| {
                    log_block_prior(
                        state.block(&layout, j, p),
                        &layout,
                        p,
                        state.lambda2[j * blocks + p],
                        state.tau2[j],
                        state.kappa2[j],
                    )
                })
                .sum()
        })
        .collect();

    let random_effect_prior = (0..n * jn)
        .map(|idx| log_normal(state.r[idx], state.phi2[idx % jn]))
        .collect();

    let shrinkage_prior = (0..jn)
        .map(|j| {
            let local: f64 = (0..blocks)
                .map(|p| log_half_cauchy_aux(state.lambda2[j * blocks + p], state.nu[j * blocks + p]))
                .sum();
            local + log_half_cauchy_aux(state.tau2[j], state.xi[j])
        })
        .collect();

    let slab_prior = state
        .kappa2
        .iter()
        .map(|&k2| log_variance_prior(k2, hyper.zeta, hyper.rho))
        .collect();
    let variance_prior = state
        .phi2
        .iter()
        .map(|&p2| log_variance_prior(p2, hyper.a, hyper.b))
        .collect();

    let terms = LogJointTerms {
        record,
        concentration,
        at_risk,
        coefficient_prior,
        random_effect_prior,
        shrinkage_prior,
        slab_prior,
        variance_prior,
    };
    if terms.total().is_finite() {
        Ok(terms)
    } else {
        Err(Error::Internal("augmented log-joint is not finite".into()))
    }
}

/// Log of the augmented joint density, up to state-independent constants.
pub fn augmented_log_joint(
    state: &ParameterState,
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
) -> Result<f64> {
    log_joint_terms(state, data, hyper, basis).map(|t| t.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{CovariateInfo, Record};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};
    use statrs::function::gamma::digamma;

    fn toy_data(constant_second: bool) -> LongitudinalDataset {
        let covs = if constant_second {
            vec![CovariateInfo::functional("x1"), CovariateInfo::constant("x2")]
        } else {
            vec![CovariateInfo::functional("x1"), CovariateInfo::functional("x2")]
        };
        let records = vec![
            Record { individual: 0, time: 0.0, x: vec![0.3, 2.0], counts: vec![5, 0, 2] },
            Record { individual: 0, time: 4.0, x: vec![-1.1, 2.0], counts: vec![1, 0, 7] },
            Record { individual: 1, time: 2.5, x: vec![0.8, -1.0], counts: vec![0, 3, 3] },
            Record { individual: 1, time: 9.0, x: vec![1.4, -1.0], counts: vec![2, 1, 0] },
            Record { individual: 2, time: 6.0, x: vec![-0.2, 0.5], counts: vec![4, 0, 4] },
        ];
        LongitudinalDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["t1".into(), "t2".into(), "t3".into()],
            covs,
            records,
        )
        .unwrap()
    }

    fn random_state(
        data: &LongitudinalDataset,
        layout: &CoefficientLayout,
        rng: &mut ChaCha8Rng,
    ) -> ParameterState {
        let mut s = ParameterState::zeros(data, layout);
        s.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.7..0.7));
        s.r.iter_mut().for_each(|r| *r = rng.random_range(-0.3..0.3));
        let jn = data.n_taxa();
        for i in 0..data.n_individuals() {
            for j in 0..jn {
                s.eta[i * jn + j] = !data.all_zero(i, j) || rng.random_bool(0.5);
            }
        }
        for (k, rec) in data.records().iter().enumerate() {
            for j in 0..jn {
                s.log_c[k * jn + j] = if s.eta[rec.individual * jn + j] {
                    rng.random_range(-2.0..1.5)
                } else {
                    f64::NEG_INFINITY
                };
            }
            s.u[k] = rng.random_range(0.2..3.0);
        }
        for v in [&mut s.lambda2, &mut s.nu, &mut s.tau2, &mut s.xi, &mut s.kappa2, &mut s.phi2] {
            v.iter_mut().for_each(|x| *x = rng.random_range(0.2..4.0));
        }
        s
    }

    #[test]
    fn shrinkage_variance_cases() {
        assert_eq!(shrinkage_variance(1.0, 1.0, 1.0), 0.5);
        assert!((shrinkage_variance(4.0, 1e12, 1.0) - 4.0).abs() < 1e-6);
        let k2 = 9.0;
        let v = shrinkage_variance(k2, 0.01, 1.0);
        assert!((v - 0.01 * k2 / (k2 + 0.01)).abs() < 1e-15);
        assert!(v < 0.01 && v < k2);
    }

    #[test]
    fn log_concentration_constant_terms() {
        let data = toy_data(true);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let mut s = ParameterState::zeros(&data, &layout);
        s.block_mut(&layout, 1, 0)[0] = 0.7;
        s.r[1] = 0.1;
        let v = log_concentration(&s, &layout, &basis, &data, 0, 1).unwrap();
        assert!((v - 0.8).abs() < 1e-14);

        let mut s = ParameterState::zeros(&data, &layout);
        s.block_mut(&layout, 2, 2)[0] = 0.5;
        // record 0 has x2 = 2
        let v = log_concentration(&s, &layout, &basis, &data, 0, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_concentration_matches_term_by_term_expansion() {
        let data = toy_data(false);
        let basis = SplineBasis::build(&data.times(), 5).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_state(&data, &layout, &mut rng);
        for k in 0..data.n_records() {
            let rec = data.record(k);
            let full = basis.evaluate_full(rec.time);
            for j in 0..3 {
                // beta_jp(t) = beta*_jp0 + sum_d beta*_jpd B_{d+1}(t)
                let coefs = s.taxon_coefs(&layout, j);
                let mut expected = s.r[rec.individual * 3 + j];
                for p in 0..3 {
                    let blk = &coefs[layout.block_range(p)];
                    let mut f = blk[0];
                    for d in 1..blk.len() {
                        f += blk[d] * full[d];
                    }
                    expected += if p == 0 { f } else { f * rec.x[p - 1] };
                }
                let got = log_concentration(&s, &layout, &basis, &data, k, j).unwrap();
                assert!((got - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structural_zero_with_counts_is_rejected() {
        let data = toy_data(false);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let mut s = ParameterState::zeros(&data, &layout);
        s.eta[0] = false;
        let err = augmented_log_joint(&s, &data, &Hyperparameters::default(), &basis).unwrap_err();
        assert!(err.to_string().contains("structural zero contradicts positive count"));
    }

    #[test]
    fn terms_sum_to_total() {
        let data = toy_data(true);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let hyper = Hyperparameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let s = random_state(&data, &layout, &mut rng);
            let terms = log_joint_terms(&s, &data, &hyper, &basis).unwrap();
            let total = augmented_log_joint(&s, &data, &hyper, &basis).unwrap();
            let by_cell: f64 = terms.record.iter().sum::<f64>()
                + terms.concentration.iter().sum::<f64>()
                + terms.at_risk.iter().sum::<f64>()
                + terms.coefficient_prior.iter().sum::<f64>()
                + terms.random_effect_prior.iter().sum::<f64>()
                + terms.shrinkage_prior.iter().sum::<f64>()
                + terms.slab_prior.iter().sum::<f64>()
                + terms.variance_prior.iter().sum::<f64>();
            assert!((by_cell - total).abs() < 1e-8);
        }
    }

    #[test]
    fn random_intercept_shift_matches_independent_terms() {
        let data = toy_data(false);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let hyper = Hyperparameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s0 = random_state(&data, &layout, &mut rng);
        let (i, j, delta) = (1, 2, 0.37);
        let mut s1 = s0.clone();
        s1.r[i * 3 + j] += delta;
        let diff = augmented_log_joint(&s1, &data, &hyper, &basis).unwrap()
            - augmented_log_joint(&s0, &data, &hyper, &basis).unwrap();

        // Independent evaluation: Gaussian prior plus gamma-shape terms.
        let mut expected = log_normal(s1.r[i * 3 + j], s0.phi2[j]) - log_normal(s0.r[i * 3 + j], s0.phi2[j]);
        if s0.eta[i * 3 + j] {
            for k in data.individual_range(i) {
                let lg0 = log_concentration(&s0, &layout, &basis, &data, k, j).unwrap();
                let lg1 = lg0 + delta;
                let lc = s0.log_c[k * 3 + j];
                let (g0, g1) = (lg0.exp(), lg1.exp());
                expected += (g1 - g0) * lc - ln_gamma(g1) + ln_gamma(g0);
            }
        }
        assert!((diff - expected).abs() < 1e-9, "{diff} vs {expected}");
    }

    #[test]
    fn dirac_cells_do_not_contribute() {
        let data = toy_data(false);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let hyper = Hyperparameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = random_state(&data, &layout, &mut rng);
        // individual 0 has all-zero counts for taxon 1
        assert!(data.all_zero(0, 1));
        s.eta[1] = false;
        for k in data.individual_range(0) {
            s.log_c[k * 3 + 1] = f64::NEG_INFINITY;
        }
        let t0 = log_joint_terms(&s, &data, &hyper, &basis).unwrap();
        // changing the coefficients of taxon 1 changes no term of individual 0
        s.block_mut(&layout, 1, 0)[0] += 0.5;
        let t1 = log_joint_terms(&s, &data, &hyper, &basis).unwrap();
        for k in data.individual_range(0) {
            assert_eq!(t0.concentration[k * 3 + 1], 0.0);
            assert_eq!(t1.concentration[k * 3 + 1], 0.0);
            assert_eq!(t0.record[k], t1.record[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let data = toy_data(false);
        let basis = SplineBasis::build(&data.times(), 4).unwrap();
        let layout = CoefficientLayout::for_data(&data, &basis);
        let hyper = Hyperparameters::default();
        let design = crate::model::Design::new(&data, &basis, &layout);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let s = random_state(&data, &layout, &mut rng);
            let j = rng.random_range(0..3);
            let p = rng.random_range(0..3);
            let d = rng.random_range(0..layout.block_len(p));
            let pos = j * layout.stride() + layout.block_range(p).start + d;
            // analytic: sum gamma (log c - digamma(gamma)) * feature + prior
            let mut grad = 0.0;
            for k in 0..data.n_records() {
                let ind = data.record(k).individual;
                if !s.eta[ind * 3 + j] {
                    continue;
                }
                let lg = log_concentration(&s, &layout, &basis, &data, k, j).unwrap();
                let g = lg.exp();
                let feat = design.row(k)[layout.block_range(p).start + d];
                grad += g * (s.log_c[k * 3 + j] - digamma(g)) * feat;
            }
            let blocks = layout.n_blocks();
            let var = if p == 0 && d == 0 {
                1.0
            } else {
                shrinkage_variance(s.kappa2[j], s.lambda2[j * blocks + p], s.tau2[j])
            };
            grad -= s.beta[pos] / var;

            let h = 1e-6;
            let mut plus = s.clone();
            plus.beta[pos] += h;
            let mut minus = s.clone();
            minus.beta[pos] -= h;
            let fd = (augmented_log_joint(&plus, &data, &hyper, &basis).unwrap()
                - augmented_log_joint(&minus, &data, &hyper, &basis).unwrap())
                / (2.0 * h);
            let rel = (fd - grad).abs() / grad.abs().max(1e-3);
            assert!(rel < 1e-5, "fd {fd} analytic {grad}");
        }
    }

    /// Integrating the augmented joint over (c, u) for J = 2, one record,
    /// recovers the Dirichlet-multinomial mass function.
    #[test]
    fn marginalization_recovers_dirichlet_multinomial() {
        let hyper = Hyperparameters::default();
        let total = 4u32;
        let mut estimates = Vec::new();
        let mut exact = Vec::new();
        let gammas = [1.3f64, 0.6];
        for z1 in 0..=total {
            let counts = vec![z1, total - z1];
            let data = LongitudinalDataset::new(
                vec!["a".into()],
                vec!["t1".into(), "t2".into()],
                vec![],
                vec![Record { individual: 0, time: 1.0, x: vec![], counts: counts.clone() }],
            )
            .unwrap();
            // single time point: pass two knots' worth of range manually
            let basis = SplineBasis::from_knots(4, vec![1.0], (0.0, 2.0)).unwrap();
            let layout = CoefficientLayout::for_data(&data, &basis);
            let mut s = ParameterState::zeros(&data, &layout);
            s.block_mut(&layout, 0, 0)[0] = gammas[0].ln();
            s.block_mut(&layout, 1, 0)[0] = gammas[1].ln();
            let base = augmented_log_joint(&s, &data, &hyper, &basis).unwrap();
            // Importance sampling: c ~ Gamma(gamma, 1), u ~ Gamma(z., T).
            let mut rng = ChaCha8Rng::seed_from_u64(100 + u64::from(z1));
            let draws = 200_000;
            let mut acc = 0.0;
            for _ in 0..draws {
                let c: Vec<f64> = gammas
                    .iter()
                    .map(|&g| Gamma::new(g, 1.0).unwrap().sample(&mut rng))
                    .collect();
                let t: f64 = c.iter().sum();
                let u = Gamma::new(f64::from(total), 1.0 / t).unwrap().sample(&mut rng);
                s.log_c = c.iter().map(|v| v.ln()).collect();
                s.u[0] = u;
                let lj = augmented_log_joint(&s, &data, &hyper, &basis).unwrap() - base;
                let lq: f64 = c
                    .iter()
                    .zip(gammas)
                    .map(|(&ci, g)| log_gamma_pdf(ci, g, 1.0))
                    .sum::<f64>()
                    + log_gamma_pdf(u, f64::from(total), t);
                acc += (lj - lq).exp();
            }
            let coef = ln_gamma(f64::from(total) + 1.0)
                - ln_gamma(f64::from(z1) + 1.0)
                - ln_gamma(f64::from(total - z1) + 1.0);
            estimates.push(acc / draws as f64 * coef.exp());
            let g: f64 = gammas.iter().sum();
            let log_dm = coef + ln_gamma(g) - ln_gamma(f64::from(total) + g)
                + ln_gamma(f64::from(z1) + gammas[0])
                - ln_gamma(gammas[0])
                + ln_gamma(f64::from(total - z1) + gammas[1])
                - ln_gamma(gammas[1]);
            exact.push(log_dm.exp());
        }
        let norm: f64 = estimates.iter().sum();
        for (e, x) in estimates.iter().zip(&exact) {
            let rel = (e / norm - x).abs() / x;
            assert!(rel < 1e-2, "estimate {} exact {x}", e / norm);
        }
    }
}
