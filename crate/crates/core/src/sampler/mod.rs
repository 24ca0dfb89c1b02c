//! Posterior sampling.

mod adapt;
mod config;
mod draws;
pub mod geweke;
pub mod io;
mod kernel;
pub mod random;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

pub use adapt::{cholesky, rescale, BlockProposal, ScalarProposal};
pub use config::{InitConfig, MoveSet, SamplerConfig};
pub use draws::{
    AcceptanceSummary, ChainMetadata, Draw, FamilyRate, PosteriorDraws, FORMAT_VERSION,
    SWEEP_ORDER,
};
pub use kernel::{initial_state, Chain, Proposals, DRIFT_TOLERANCE};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, LongitudinalDataset};

/// Environment variable overriding the number of parallel chain workers.
pub const WORKERS_ENV: &str = "FUNCZIDM_WORKERS";

/// Seed of chain `chain` derived from the run seed; chain 0 uses the run
/// seed itself.
pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    if chain == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one chain with the seed in `config`.
pub fn run_chain(
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    run_labeled_chain(data, hyper, basis, config, 0, config.seed)
}

/// Runs `config.n_chains` independent chains in parallel.
pub fn run_chains(
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
    config: &SamplerConfig,
) -> Result<Vec<PosteriorDraws>> {
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(config.n_chains);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.n_chains)
            .into_par_iter()
            .map(|c| run_labeled_chain(data, hyper, basis, config, c, chain_seed(config.seed, c)))
            .collect()
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    crate::basis::quantile_sorted(&v, 0.5)
}

fn proposal_summary(p: &Proposals) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("beta".to_string(), median(p.beta.iter().map(|b| b.scale.scale).collect())),
        ("r".to_string(), median(p.r.iter().map(|b| b.scale).collect())),
        ("kappa".to_string(), median(p.kappa.iter().map(|b| b.scale).collect())),
        ("lambda".to_string(), median(p.lambda.iter().map(|b| b.scale).collect())),
        ("tau".to_string(), median(p.tau.iter().map(|b| b.scale).collect())),
    ])
}

/// Runs one chain with an explicit label and seed.
pub fn run_labeled_chain(
    data: &LongitudinalDataset,
    hyper: &Hyperparameters,
    basis: &SplineBasis,
    config: &SamplerConfig,
    label: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    let start = Instant::now();
    let mut chain = Chain::initialize(data, hyper, basis, config, seed)?;
    let jn = data.n_taxa();
    let mut draws = Vec::with_capacity(config.n_retained());
    let mut subject_ra = vec![0.0; data.n_records() * jn];
    let mut eta_acc = vec![0.0; data.n_individuals() * jn];

    for it in 0..config.iterations {
        if it == config.burn_in && it > 0 {
            chain.freeze_adaptation();
            chain.reset_ledger();
        }
        chain.sweep()?;
        if it < config.burn_in {
            chain.observe_blocks();
            if (it + 1) % config.adapt_window == 0 {
                chain.adapt();
            }
        }
        let checkpoint = (it + 1) % config.checkpoint_every == 0;
        if checkpoint {
            chain.refresh_caches(true)?;
        }
        let retained = config.is_retained(it);
        if checkpoint || retained {
            let lj = chain.log_joint();
            if !lj.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    detail: format!("log-joint is {lj}"),
                });
            }
        }
        if retained {
            draws.push(chain.snapshot(config.store_subject_params));
            chain.accumulate_subject_ra(&mut subject_ra);
            chain.accumulate_eta(&mut eta_acc);
        }
        if config.progress_every > 0 && (it + 1) % config.progress_every == 0 {
            let rates: Vec<String> = chain
                .ledger
                .summary()
                .iter()
                .filter(|(_, r)| r.proposed > 0)
                .map(|(k, r)| format!("{k}={:.2}", r.rate()))
                .collect();
            eprintln!(
                "chain {label} iter {} log-joint {:.3} accept {}",
                it + 1,
                chain.log_joint(),
                rates.join(" ")
            );
        }
    }

    let kept = draws.len().max(1) as f64;
    subject_ra.iter_mut().for_each(|v| *v /= kept);
    eta_acc.iter_mut().for_each(|v| *v /= kept);
    let meta = ChainMetadata {
        format_version: FORMAT_VERSION,
        chain: label,
        seed,
        config: config.clone(),
        hyper: hyper.clone(),
        basis: basis.clone(),
        knot_rule: basis.knot_rule().to_string(),
        layout: chain.layout().clone(),
        n_individuals: data.n_individuals(),
        n_records: data.n_records(),
        taxon_names: data.taxon_names().to_vec(),
        covariate_names: data.covariates().iter().map(|c| c.name.clone()).collect(),
        individual_ids: data.individual_ids().to_vec(),
        subject_params: config.store_subject_params,
        sweep_order: SWEEP_ORDER.iter().map(|s| s.to_string()).collect(),
        acceptance: chain.ledger.summary(),
        proposal_scales: proposal_summary(&chain.proposals),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PosteriorDraws {
        meta,
        draws,
        subject_ra_mean: subject_ra,
        eta_mean: eta_acc,
    })
}
