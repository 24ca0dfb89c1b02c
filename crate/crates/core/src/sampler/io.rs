//! Chain persistence.
//!
//! Binary layout: the magic bytes `FCZD`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, then little-endian
//! `f64` payload. Each draw stores `iteration, log_joint, beta, lambda2,
//! tau2, kappa2, phi2` followed by `r` and `eta` (as 0/1) when subject
//! parameters are kept; the two record-level means close the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::draws::{ChainMetadata, Draw, PosteriorDraws, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FCZD";

#[derive(Serialize, Deserialize)]
struct Header {
    meta: ChainMetadata,
    n_draws: usize,
}

struct Sizes {
    beta: usize,
    slots: usize,
    taxa: usize,
    pairs: usize,
    cells: usize,
}

impl Sizes {
    fn of(meta: &ChainMetadata) -> Self {
        let layout = &meta.layout;
        let taxa = layout.n_taxa();
        Self {
            beta: taxa * layout.stride(),
            slots: taxa * layout.n_blocks(),
            taxa,
            pairs: meta.n_individuals * taxa,
            cells: meta.n_records * taxa,
        }
    }
}

fn put(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn take(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::MalformedChain("truncated payload".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_chain(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_vec(&Header {
        meta: draws.meta.clone(),
        n_draws: draws.draws.len(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let subject = draws.meta.subject_params;
    for d in &draws.draws {
        put(&mut w, &[d.iteration as f64, d.log_joint])?;
        put(&mut w, &d.beta)?;
        put(&mut w, &d.lambda2)?;
        put(&mut w, &d.tau2)?;
        put(&mut w, &d.kappa2)?;
        put(&mut w, &d.phi2)?;
        if subject {
            let (Some(r), Some(eta)) = (&d.r, &d.eta) else {
                return Err(Error::MalformedChain(
                    "subject parameters flagged but missing from a draw".into(),
                ));
            };
            put(&mut w, r)?;
            let flags: Vec<f64> = eta.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
            put(&mut w, &flags)?;
        }
    }
    put(&mut w, &draws.subject_ra_mean)?;
    put(&mut w, &draws.eta_mean)?;
    w.flush()?;
    Ok(())
}

pub fn read_chain(path: &Path) -> Result<PosteriorDraws> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedChain("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedChain("not a chain file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(version));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let len = u64::from_le_bytes(long) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)
        .map_err(|_| Error::MalformedChain("truncated header".into()))?;
    let Header { meta, n_draws } = serde_json::from_slice(&header)?;
    meta.basis.validate()?;
    let sizes = Sizes::of(&meta);
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let head = take(&mut r, 2)?;
        let mut draw = Draw {
            iteration: head[0] as usize,
            log_joint: head[1],
            beta: take(&mut r, sizes.beta)?,
            lambda2: take(&mut r, sizes.slots)?,
            tau2: take(&mut r, sizes.taxa)?,
            kappa2: take(&mut r, sizes.taxa)?,
            phi2: take(&mut r, sizes.taxa)?,
            r: None,
            eta: None,
        };
        if meta.subject_params {
            draw.r = Some(take(&mut r, sizes.pairs)?);
            draw.eta = Some(take(&mut r, sizes.pairs)?.iter().map(|&v| v != 0.0).collect());
        }
        draws.push(draw);
    }
    let subject_ra_mean = take(&mut r, sizes.cells)?;
    let eta_mean = take(&mut r, sizes.pairs)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::MalformedChain(format!("{} trailing bytes", rest.len())));
    }
    Ok(PosteriorDraws {
        meta,
        draws,
        subject_ra_mean,
        eta_mean,
    })
}

/// Writes one CSV per parameter family (`beta.csv`, `lambda2.csv`,
/// `tau2.csv`, `kappa2.csv`, `phi2.csv`, `log_joint.csv`, and `r.csv` /
/// `eta.csv` when kept) into `dir`, one row per retained draw.
pub fn export_csv(dir: &Path, draws: &PosteriorDraws) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = &draws.meta;
    let layout = &meta.layout;
    let taxa = &meta.taxon_names;
    let block_name = |p: usize| -> String {
        if p == 0 {
            "intercept".to_string()
        } else {
            meta.covariate_names[p - 1].clone()
        }
    };

    let mut beta_cols = Vec::new();
    let mut slot_cols = Vec::new();
    for t in taxa {
        for p in 0..layout.n_blocks() {
            for d in 0..layout.block_len(p) {
                beta_cols.push(format!("{t}:{}:{d}", block_name(p)));
            }
            slot_cols.push(format!("{t}:{}", block_name(p)));
        }
    }
    let taxa_cols: Vec<String> = taxa.clone();
    let mut pair_cols = Vec::new();
    for id in &meta.individual_ids {
        for t in taxa {
            pair_cols.push(format!("{id}:{t}"));
        }
    }

    let family = |name: &str, cols: &[String], pick: &dyn Fn(&Draw) -> Vec<f64>| -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
        let mut header = vec!["iteration".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header)?;
        for d in &draws.draws {
            let mut row = vec![d.iteration.to_string()];
            row.extend(pick(d).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    family("log_joint", &["log_joint".to_string()], &|d| vec![d.log_joint])?;
    family("beta", &beta_cols, &|d| d.beta.clone())?;
    family("lambda2", &slot_cols, &|d| d.lambda2.clone())?;
    family("tau2", &taxa_cols, &|d| d.tau2.clone())?;
    family("kappa2", &taxa_cols, &|d| d.kappa2.clone())?;
    family("phi2", &taxa_cols, &|d| d.phi2.clone())?;
    if meta.subject_params {
        family("r", &pair_cols, &|d| d.r.clone().unwrap_or_default())?;
        family("eta", &pair_cols, &|d| {
            d.eta
                .as_ref()
                .map(|e| e.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
                .unwrap_or_default()
        })?;
    }
    Ok(())
}
