use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use funczidm::inference::{
    evaluate_curves, heatmap, linspace, summarize_function, Quantity,
};
use funczidm::ingest::{ingest_csv_with_report, DataConfig, IngestReport, RunConfig};
use funczidm::sampler::io::{export_csv, read_chain, write_chain};
use funczidm::sampler::{run_chains, AcceptanceSummary};
use funczidm::simgen::{
    generate, score_mead, score_pairs, scoring_grid, summarize_scores, write_dataset_csv,
    write_pair_scores, write_score_table, SimulationConfig, SimulationTruth,
};
use funczidm::{CovariateProfile, Error, PosteriorDraws, SamplerConfig, SplineBasis};

#[derive(Parser)]
#[command(
    name = "funczidm",
    version,
    about = "Functional concurrent zero-inflated Dirichlet-multinomial regression",
    after_help = "Exit codes: 0 success, 2 invalid input, 3 sampler divergence.\n\
                  FUNCZIDM_WORKERS sets the number of chains run in parallel."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset described by a TOML run config.
    Fit(FitArgs),
    /// Generate a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Score fitted chains against a simulation truth.
    Score(ScoreArgs),
    /// Posterior summaries of population-level curves.
    Infer(InferArgs),
}

/// Overrides shared by commands that run the sampler.
#[derive(Args, Clone, Default)]
struct RunOverrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of chains.
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

impl RunOverrides {
    fn apply(&self, s: &mut SamplerConfig) {
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.chains {
            s.n_chains = v;
        }
        if let Some(v) = self.iters {
            s.iterations = v;
        }
        if let Some(v) = self.burnin {
            s.burn_in = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    run: RunOverrides,
    /// Output directory; overrides `out_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one CSV per parameter family for every chain.
    #[arg(long)]
    csv: bool,
    /// Print progress every this many iterations.
    #[arg(long)]
    progress: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of taxa.
    #[arg(long, default_value_t = 50)]
    taxa: usize,
    #[arg(long, default_value_t = 10)]
    covariates: usize,
    #[arg(long, default_value_t = 50)]
    individuals: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML file with a full simulation design; flags are ignored
    /// when given.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Chain files of one fit; they are pooled.
    #[arg(required = true)]
    chains: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantityKind {
    Beta,
    Ra,
    DeltaRa,
    DeltaDiv,
}

#[derive(Args)]
struct InferArgs {
    /// Run config providing the inference window and diversity order.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    quantity: QuantityKind,
    /// Taxon name or zero-based index.
    #[arg(long)]
    taxon: Option<String>,
    /// Covariate name or one-based index (0 is the intercept).
    #[arg(long)]
    covariate: Option<String>,
    /// Covariate increase for deltaRA / deltaDiv.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Hill diversity order.
    #[arg(long)]
    l: Option<f64>,
    /// JSON covariate profile; defaults to all covariates at zero.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    t_lo: Option<f64>,
    #[arg(long)]
    t_hi: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    /// Credible level of the band.
    #[arg(long)]
    level: Option<f64>,
    /// Also write a heatmap over `v` given as `lo:hi:n`.
    #[arg(long)]
    heatmap: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    chains: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ChainReport {
    chain: usize,
    seed: u64,
    file: PathBuf,
    draws: usize,
    elapsed_seconds: f64,
    acceptance: AcceptanceSummary,
}

#[derive(Serialize)]
struct FitSummary {
    ingest: IngestReport,
    individuals: usize,
    records: usize,
    taxa: Vec<String>,
    covariates: Vec<String>,
    chains: Vec<ChainReport>,
}

fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.fczd"))
}

fn fit(args: FitArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    args.run.apply(&mut cfg.sampler);
    if let Some(p) = args.progress {
        cfg.sampler.progress_every = p;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    let (data, report) = ingest_csv_with_report(&cfg.data.path, &cfg)?;
    eprintln!(
        "ingested {} records, {} individuals, {} taxa ({} dropped), {} covariates",
        data.n_records(),
        data.n_individuals(),
        data.n_taxa(),
        report.dropped_taxa.len(),
        data.n_covariates()
    );
    let basis = SplineBasis::build(&data.times(), cfg.hyper.df)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    std::fs::write(cfg.out_dir.join("run.toml"), cfg.to_toml()?)?;
    let chains = run_chains(&data, &cfg.hyper, &basis, &cfg.sampler)?;
    let mut reports = Vec::with_capacity(chains.len());
    for draws in &chains {
        let c = draws.meta.chain;
        let file = chain_file(&cfg.out_dir, c);
        write_chain(&file, draws)?;
        if args.csv {
            export_csv(&cfg.out_dir.join(format!("chain_{c}_csv")), draws)?;
        }
        let acc = &draws.meta.acceptance;
        let rates: Vec<String> = acc
            .iter()
            .filter(|(_, f)| f.proposed > 0)
            .map(|(name, f)| format!("{name} {:.2}", f.rate()))
            .collect();
        println!(
            "chain {c}: {} draws in {:.1}s; acceptance {}",
            draws.len(),
            draws.meta.elapsed_seconds,
            rates.join(", ")
        );
        reports.push(ChainReport {
            chain: c,
            seed: draws.meta.seed,
            file,
            draws: draws.len(),
            elapsed_seconds: draws.meta.elapsed_seconds,
            acceptance: acc.clone(),
        });
    }
    let summary = FitSummary {
        ingest: report,
        individuals: data.n_individuals(),
        records: data.n_records(),
        taxa: data.taxon_names().to_vec(),
        covariates: data.covariates().iter().map(|c| c.name.clone()).collect(),
        chains: reports,
    };
    std::fs::write(
        cfg.out_dir.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    println!("no divergences; wrote {}", cfg.out_dir.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let sim = match &args.config {
        Some(path) => toml::from_str::<SimulationConfig>(&std::fs::read_to_string(path)?)
            .map_err(Error::from)?,
        None => SimulationConfig {
            n_taxa: args.taxa,
            n_covariates: args.covariates,
            n_individuals: args.individuals,
            ..SimulationConfig::default()
        },
    };
    let (data, truth) = generate(&sim, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset_csv(&args.out.join("data.csv"), &data)?;
    truth.write_json(&args.out.join("truth.json"))?;
    let run = RunConfig {
        data: DataConfig {
            path: PathBuf::from("data.csv"),
            min_individuals: 1,
            first_taxon: data.taxon_names().first().cloned(),
            ..DataConfig::default()
        },
        out_dir: PathBuf::from("fit"),
        sampler: SamplerConfig {
            seed: args.seed,
            ..SamplerConfig::desk()
        },
        inference: funczidm::ingest::InferenceConfig {
            t_lo: sim.time_range.0,
            t_hi: sim.time_range.1,
            grid_points: 101,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    std::fs::write(args.out.join("config.toml"), run.to_toml()?)?;
    println!(
        "wrote {} records for {} individuals and {} taxa to {}",
        data.n_records(),
        data.n_individuals(),
        data.n_taxa(),
        args.out.display()
    );
    Ok(())
}

fn load_chains(paths: &[PathBuf]) -> anyhow::Result<PosteriorDraws> {
    let mut chains = Vec::with_capacity(paths.len());
    for p in paths {
        chains.push(read_chain(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let first = &chains[0].meta;
    for c in &chains[1..] {
        if c.meta.layout != first.layout
            || c.meta.basis != first.basis
            || c.meta.taxon_names != first.taxon_names
        {
            return Err(Error::InvalidConfig("chains come from different models".into()).into());
        }
    }
    Ok(PosteriorDraws::pool(chains).expect("at least one chain"))
}

fn score(args: ScoreArgs) -> anyhow::Result<()> {
    let truth = SimulationTruth::read_json(&args.truth)?;
    let draws = load_chains(&args.chains)?;
    let (data, _) = generate(&truth.config, truth.seed)?;
    if data.n_records() != draws.meta.n_records {
        bail!(Error::InvalidConfig(
            "the chains were not fitted to the dataset of this truth".into()
        ));
    }
    let pairs = score_pairs(&draws, &truth, &scoring_grid())?;
    let mead = score_mead(&draws, &data, &truth)?;
    let runtime = args
        .chains
        .iter()
        .map(|p| read_chain(p).map(|c| c.meta.elapsed_seconds).unwrap_or(0.0))
        .sum();
    let summary = summarize_scores(truth.seed, &pairs, mead, truth.n_taxa(), runtime);
    std::fs::create_dir_all(&args.out)?;
    write_score_table(&args.out.join("scores.csv"), std::slice::from_ref(&summary))?;
    write_pair_scores(&args.out.join("pairs.csv"), &pairs)?;
    println!(
        "MeAD {:.4} | active RA95 {:.4} B95 {:.4} ARMSE {:.4} | non-active RA95 {:.4} B95 {:.4} ARMSE {:.4}",
        summary.mead,
        summary.active_ra95,
        summary.active_b95,
        summary.active_armse,
        summary.inactive_ra95,
        summary.inactive_b95,
        summary.inactive_armse
    );
    Ok(())
}

fn resolve(spec: &str, names: &[String], offset: usize, what: &str) -> anyhow::Result<usize> {
    if let Ok(k) = spec.parse::<usize>() {
        return Ok(k);
    }
    if what == "covariate" && spec == "intercept" {
        return Ok(0);
    }
    names
        .iter()
        .position(|n| n == spec)
        .map(|k| k + offset)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown {what} {spec:?}")).into())
}

fn infer(args: InferArgs) -> anyhow::Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let draws = load_chains(&args.chains)?;
    let meta = &draws.meta;
    let taxon = |need: bool| -> anyhow::Result<usize> {
        match &args.taxon {
            Some(s) => resolve(s, &meta.taxon_names, 0, "taxon"),
            None if need => Err(Error::InvalidConfig("--taxon is required".into()).into()),
            None => Ok(0),
        }
    };
    let covariate = |need: bool| -> anyhow::Result<usize> {
        match &args.covariate {
            Some(s) => resolve(s, &meta.covariate_names, 1, "covariate"),
            None if need => Err(Error::InvalidConfig("--covariate is required".into()).into()),
            None => Ok(0),
        }
    };
    let l = args.l.unwrap_or(cfg.hyper.diversity_order);
    let quantity = match args.quantity {
        QuantityKind::Beta => Quantity::Beta {
            taxon: taxon(true)?,
            covariate: covariate(false)?,
        },
        QuantityKind::Ra => Quantity::Ra { taxon: taxon(true)? },
        QuantityKind::DeltaRa => Quantity::DeltaRa {
            taxon: taxon(true)?,
            covariate: covariate(true)?,
            v: args.v,
        },
        QuantityKind::DeltaDiv => Quantity::DeltaDiv {
            covariate: covariate(true)?,
            v: args.v,
            l,
        },
    };
    let profile = match &args.profile {
        Some(p) => serde_json::from_slice::<CovariateProfile>(&std::fs::read(p)?)
            .map_err(Error::from)?,
        None => CovariateProfile::reference(meta.n_covariates()),
    };
    let t_lo = args.t_lo.unwrap_or(cfg.inference.t_lo);
    let t_hi = args.t_hi.unwrap_or(cfg.inference.t_hi);
    let n = args.grid.unwrap_or(cfg.inference.grid_points);
    let level = args.level.unwrap_or(cfg.inference.level);
    if !(t_lo < t_hi) || n < 2 {
        bail!(Error::InvalidConfig("need t_lo < t_hi and a grid of at least two points".into()));
    }
    let grid = linspace(t_lo, t_hi, n);
    let label = quantity.label(&meta.taxon_names, &meta.covariate_names);
    let curves = evaluate_curves(&draws, &quantity, &profile, &grid)?;
    let summary = summarize_function(&curves, &grid, level, &label)?;
    std::fs::create_dir_all(&args.out)?;
    summary.write_csv(&args.out.join("summary.csv"))?;
    summary.write_json(&args.out.join("summary.json"))?;
    if let Some(spec) = &args.heatmap {
        let parts: Vec<&str> = spec.split(':').collect();
        let parsed = (parts.len() == 3)
            .then(|| {
                Some((
                    parts[0].parse::<f64>().ok()?,
                    parts[1].parse::<f64>().ok()?,
                    parts[2].parse::<usize>().ok()?,
                ))
            })
            .flatten();
        let Some((lo, hi, k)) = parsed else {
            bail!(Error::InvalidConfig(format!("heatmap grid {spec:?} is not lo:hi:n")));
        };
        let map = heatmap(&draws, &quantity, &profile, &grid, &linspace(lo, hi, k))?;
        map.write_csv(&args.out.join("heatmap.csv"))?;
        map.write_json(&args.out.join("heatmap.json"))?;
    }
    println!("{label}: {} draws, {} grid points -> {}", draws.len(), n, args.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_divergence() => 3,
        Some(e) if e.is_validation() => 2,
        Some(Error::Io(_)) => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Score(a) => score(a),
        Command::Infer(a) => infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
