//! Long-format CSV ingestion and the TOML run configuration.
//!
//! A data file has a header row followed by one row per sample:
//! `id, time, <covariate columns>, <count columns>`. Which columns are
//! covariates comes from the configuration; everything else after `time`
//! is a taxon.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    column_moments, CoefficientKind, CovariateInfo, Hyperparameters, LongitudinalDataset, Record,
    Scaling,
};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub id_column: String,
    pub time_column: String,
    /// Drop taxa observed (any nonzero count) in fewer than this many
    /// individuals.
    pub min_individuals: usize,
    /// Name of the first count column. When set, every column between the
    /// time column and this one is a covariate; undeclared ones are
    /// functional and left unscaled.
    pub first_taxon: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data.csv"),
            id_column: "id".into(),
            time_column: "time".into(),
            min_individuals: 5,
            first_taxon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(default)]
    pub kind: CoefficientKind,
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub scale: bool,
    /// Reference level of a categorical column. Setting it makes the column
    /// categorical: one indicator per other level.
    #[serde(default)]
    pub reference: Option<String>,
}

impl CovariateSpec {
    pub fn functional(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CoefficientKind::Functional,
            center: false,
            scale: false,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Window over which population-level curves are reported.
    pub t_lo: f64,
    pub t_hi: f64,
    pub grid_points: usize,
    /// Credible level of reported bands.
    pub level: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            t_lo: 0.0,
            t_hi: 50.0,
            grid_points: 100,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub out_dir: PathBuf,
    pub covariates: Vec<CovariateSpec>,
    pub hyper: Hyperparameters,
    pub sampler: SamplerConfig,
    pub inference: InferenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            out_dir: PathBuf::from("out"),
            covariates: Vec::new(),
            hyper: Hyperparameters::default(),
            sampler: SamplerConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file. Relative data and output paths are resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.data.path.is_relative() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.sampler.validate()?;
        let inf = &self.inference;
        if !(inf.t_lo < inf.t_hi) || inf.grid_points < 2 {
            return Err(Error::InvalidConfig(
                "inference window needs t_lo < t_hi and at least two grid points".into(),
            ));
        }
        if !(inf.level > 0.0 && inf.level < 1.0) {
            return Err(Error::InvalidConfig("inference level must be in (0, 1)".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidConfig(format!("covariate {} declared twice", c.name)));
            }
            if c.reference.is_some() && (c.center || c.scale) {
                return Err(Error::InvalidConfig(format!(
                    "categorical covariate {} cannot be centered or scaled",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// Counts of what ingestion kept and dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub taxa_read: usize,
    pub dropped_taxa: Vec<String>,
    /// Records left without counts once rare taxa were removed.
    pub dropped_records: usize,
}

fn numeric(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::InvalidData(format!("row {row}, column {column}: non-numeric value {cell:?}"))
    })
}

fn count(cell: &str, row: usize, column: &str) -> Result<u32> {
    let v = numeric(cell, row, column)?;
    if v < 0.0 {
        return Err(Error::InvalidData(format!(
            "row {row}, column {column}: negative count {v}"
        )));
    }
    if v.fract() != 0.0 || v > f64::from(u32::MAX) {
        return Err(Error::InvalidData(format!(
            "row {row}, column {column}: count {v} is not a non-negative integer"
        )));
    }
    Ok(v as u32)
}

enum Column {
    Numeric { spec: CovariateSpec, index: usize },
    Categorical { spec: CovariateSpec, index: usize, reference: String },
}

pub fn ingest_csv(path: &Path, config: &RunConfig) -> Result<LongitudinalDataset> {
    ingest_csv_with_report(path, config).map(|(d, _)| d)
}

pub fn ingest_csv_with_report(
    path: &Path,
    config: &RunConfig,
) -> Result<(LongitudinalDataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let dc = &config.data;
    let id_col = find(&dc.id_column)
        .ok_or_else(|| Error::InvalidData(format!("missing id column {:?}", dc.id_column)))?;
    let time_col = find(&dc.time_column)
        .ok_or_else(|| Error::InvalidData(format!("missing time column {:?}", dc.time_column)))?;

    let mut specs: Vec<CovariateSpec> = config.covariates.clone();
    if let Some(first) = &dc.first_taxon {
        let stop = find(first)
            .ok_or_else(|| Error::InvalidData(format!("first taxon column {first:?} not found")))?;
        for name in &header[time_col.max(id_col) + 1..stop] {
            if !specs.iter().any(|s| &s.name == name) {
                specs.push(CovariateSpec::functional(name.clone()));
            }
        }
    }
    let mut covariate_cols = Vec::with_capacity(specs.len());
    for spec in specs {
        let index = find(&spec.name).ok_or_else(|| {
            Error::InvalidConfig(format!("covariate {:?} is not a column of the data", spec.name))
        })?;
        covariate_cols.push(match spec.reference.clone() {
            Some(reference) => Column::Categorical { spec, index, reference },
            None => Column::Numeric { spec, index },
        });
    }
    let used: BTreeSet<usize> = covariate_cols
        .iter()
        .map(|c| match c {
            Column::Numeric { index, .. } | Column::Categorical { index, .. } => *index,
        })
        .chain([id_col, time_col])
        .collect();
    let taxon_cols: Vec<usize> = (0..header.len()).filter(|k| !used.contains(k)).collect();
    if taxon_cols.is_empty() {
        return Err(Error::InvalidData("no count columns".into()));
    }

    struct Raw {
        id: String,
        time: f64,
        cells: Vec<String>,
        counts: Vec<u32>,
    }
    let mut raws = Vec::new();
    for (r, row) in reader.records().enumerate() {
        let row = row?;
        let line = r + 2;
        let time = numeric(&row[time_col], line, &dc.time_column)?;
        if !time.is_finite() {
            return Err(Error::InvalidData(format!("row {line}: non-finite time")));
        }
        let counts = taxon_cols
            .iter()
            .map(|&k| count(&row[k], line, &header[k]))
            .collect::<Result<Vec<u32>>>()?;
        if counts.iter().all(|&z| z == 0) {
            return Err(Error::InvalidData(format!(
                "row {line} (id {}, time {time}) has all-zero counts",
                &row[id_col]
            )));
        }
        raws.push(Raw {
            id: row[id_col].to_string(),
            time,
            cells: row.iter().map(String::from).collect(),
            counts,
        });
    }
    if raws.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let mut seen = BTreeSet::new();
    for raw in &raws {
        if !seen.insert((raw.id.as_str(), raw.time.to_bits())) {
            return Err(Error::InvalidData(format!(
                "duplicate record for id {} at time {}",
                raw.id, raw.time
            )));
        }
    }

    // rare-taxon filter
    let mut carriers: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); taxon_cols.len()];
    for raw in &raws {
        for (k, &z) in raw.counts.iter().enumerate() {
            if z > 0 {
                carriers[k].insert(raw.id.as_str());
            }
        }
    }
    let keep: Vec<usize> = (0..taxon_cols.len())
        .filter(|&k| carriers[k].len() >= dc.min_individuals.max(1))
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidData(format!(
            "no taxon is observed in at least {} individuals",
            dc.min_individuals
        )));
    }
    let dropped_taxa = (0..taxon_cols.len())
        .filter(|k| !keep.contains(k))
        .map(|k| header[taxon_cols[k]].clone())
        .collect();
    let rows_read = raws.len();
    let raws: Vec<Raw> = raws
        .into_iter()
        .map(|raw| Raw {
            counts: keep.iter().map(|&k| raw.counts[k]).collect(),
            ..raw
        })
        .filter(|raw| raw.counts.iter().any(|&z| z > 0))
        .collect();
    let dropped_records = rows_read - raws.len();

    // covariate expansion
    let mut infos = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut widths = Vec::with_capacity(covariate_cols.len());
    for col in &covariate_cols {
        let before = infos.len();
        match col {
            Column::Numeric { spec, index } => {
                let values = raws
                    .iter()
                    .enumerate()
                    .map(|(r, raw)| numeric(&raw.cells[*index], r + 2, &spec.name))
                    .collect::<Result<Vec<f64>>>()?;
                infos.push(CovariateInfo {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    scaling: None,
                });
                columns.push(values);
            }
            Column::Categorical { spec, index, reference } => {
                let levels: BTreeSet<&str> = raws.iter().map(|r| r.cells[*index].as_str()).collect();
                if !levels.contains(reference.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "reference level {reference:?} of {} does not occur in the data",
                        spec.name
                    )));
                }
                for level in levels.iter().filter(|&&l| l != reference) {
                    infos.push(CovariateInfo {
                        name: format!("{}={level}", spec.name),
                        kind: spec.kind,
                        scaling: None,
                    });
                    columns.push(
                        raws.iter()
                            .map(|r| if r.cells[*index] == *level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
        widths.push(infos.len() - before);
    }

    let mut ids: Vec<String> = Vec::new();
    let mut index_of: HashMap<&str, usize> = HashMap::new();
    for raw in &raws {
        if !index_of.contains_key(raw.id.as_str()) {
            index_of.insert(raw.id.as_str(), ids.len());
            ids.push(raw.id.clone());
        }
    }
    let mut records: Vec<Record> = raws
        .iter()
        .enumerate()
        .map(|(r, raw)| Record {
            individual: index_of[raw.id.as_str()],
            time: raw.time,
            x: columns.iter().map(|c| c[r]).collect(),
            counts: raw.counts.clone(),
        })
        .collect();

    // centering and scaling over all retained observations
    let mut q = 0;
    for (col, width) in covariate_cols.iter().zip(&widths) {
        if let Column::Numeric { spec, .. } = col {
            if spec.center || spec.scale {
                let (mean, sd) = column_moments(&records, q);
                if spec.scale && !(sd > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "covariate {} is constant and cannot be scaled",
                        spec.name
                    )));
                }
                for rec in records.iter_mut() {
                    if spec.center {
                        rec.x[q] -= mean;
                    }
                    if spec.scale {
                        rec.x[q] /= sd;
                    }
                }
                infos[q].scaling = Some(Scaling {
                    mean,
                    sd,
                    centered: spec.center,
                    scaled: spec.scale,
                });
            }
        }
        q += width;
    }

    let taxa: Vec<String> = keep.iter().map(|&k| header[taxon_cols[k]].clone()).collect();
    let data = LongitudinalDataset::new(ids, taxa, infos, records)?;
    let report = IngestReport {
        rows_read,
        taxa_read: taxon_cols.len(),
        dropped_taxa,
        dropped_records,
    };
    Ok((data, report))
}

/// Writes `data` in the layout read by [`ingest_csv`], with covariates as
/// stored (already expanded and scaled).
pub fn write_csv(path: &Path, data: &LongitudinalDataset) -> Result<()> {
    crate::simgen::write_dataset_csv(path, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        path
    }

    fn config(covariates: Vec<CovariateSpec>, k: usize) -> RunConfig {
        RunConfig {
            covariates,
            data: DataConfig {
                min_individuals: k,
                ..DataConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn toy_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "toy.csv", "id,time,x,a,b\ns1,1.5,0.25,3,0\ns2,2,-1,0,7\n");
        let cfg = config(vec![CovariateSpec::functional("x")], 1);
        let data = ingest_csv(&path, &cfg).unwrap();
        assert_eq!(data.n_records(), 2);
        assert_eq!(data.taxon_names(), ["a", "b"]);
        let out = dir.path().join("out.csv");
        write_csv(&out, &data).unwrap();
        let again = ingest_csv(&out, &cfg).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn k_filter() {
        let dir = tempfile::tempdir().unwrap();
        let text = "id,time,a,b,c\n\
                    s1,1,1,0,0\ns1,2,1,1,0\ns2,1,1,0,0\ns3,1,2,3,0\n";
        let path = write(dir.path(), "k.csv", text);
        let one = ingest_csv(&path, &config(vec![], 1)).unwrap();
        assert_eq!(one.taxon_names(), ["a", "b"]);
        let (three, report) = ingest_csv_with_report(&path, &config(vec![], 3)).unwrap();
        assert_eq!(three.taxon_names(), ["a"]);
        assert_eq!(report.dropped_taxa, ["b", "c"]);
        assert_eq!(report.dropped_records, 0);
        assert!(ingest_csv(&path, &config(vec![], 4)).is_err());
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("neg.csv", "id,time,a\ns1,1,-2\n", "negative"),
            ("nan.csv", "id,time,a\ns1,1,abc\n", "non-numeric"),
            ("dup.csv", "id,time,a\ns1,1,2\ns1,1,3\n", "duplicate"),
            ("zero.csv", "id,time,a,b\ns1,1,0,0\n", "all-zero"),
        ];
        for (name, text, needle) in cases {
            let path = write(dir.path(), name, text);
            let err = ingest_csv(&path, &config(vec![], 1)).unwrap_err();
            assert!(err.is_validation());
            assert!(err.to_string().contains(needle), "{name}: {err}");
        }
        let path = write(dir.path(), "ok.csv", "id,time,a\ns1,1,2\n");
        let err = ingest_csv(&path, &config(vec![CovariateSpec::functional("y")], 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn categorical_expansion_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let text = "id,time,sex,w,a\n\
                    s1,1,f,10,1\ns1,2,f,12,2\ns2,1,m,14,3\ns3,1,x,20,4\n";
        let path = write(dir.path(), "cat.csv", text);
        let cfg = config(
            vec![
                CovariateSpec {
                    name: "sex".into(),
                    kind: CoefficientKind::Constant,
                    center: false,
                    scale: false,
                    reference: Some("f".into()),
                },
                CovariateSpec {
                    name: "w".into(),
                    kind: CoefficientKind::Functional,
                    center: true,
                    scale: true,
                    reference: None,
                },
            ],
            1,
        );
        let data = ingest_csv(&path, &cfg).unwrap();
        let names: Vec<&str> = data.covariates().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["sex=m", "sex=x", "w"]);
        assert_eq!(data.covariates()[0].kind, CoefficientKind::Constant);
        let x: Vec<Vec<f64>> = data.records().iter().map(|r| r.x.clone()).collect();
        assert_eq!(x[0][..2], [0.0, 0.0]);
        assert_eq!(x[2][..2], [1.0, 0.0]);
        assert_eq!(x[3][..2], [0.0, 1.0]);
        let w: Vec<f64> = x.iter().map(|r| r[2]).collect();
        let mean = w.iter().sum::<f64>() / 4.0;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let s = data.covariates()[2].scaling.unwrap();
        assert!((s.mean - 14.0).abs() < 1e-12);

        let mut bad = cfg.clone();
        bad.covariates[0].reference = Some("z".into());
        assert!(ingest_csv(&path, &bad).is_err());
    }

    #[test]
    fn first_taxon_marks_covariate_block() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.csv", "id,time,x1,x2,t1,t2\ns1,0,1,2,3,4\n");
        let mut cfg = config(vec![], 1);
        cfg.data.first_taxon = Some("t1".into());
        let data = ingest_csv(&path, &cfg).unwrap();
        assert_eq!(data.n_covariates(), 2);
        assert_eq!(data.n_taxa(), 2);
    }

    #[test]
    fn config_parses_with_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "run.toml",
            "out_dir = \"fit\"\n[data]\npath = \"d.csv\"\n[hyper]\nalpha = 0.5\n\
             [sampler]\niterations = 100\nburn_in = 50\n\
             [[covariates]]\nname = \"sex\"\nkind = \"constant\"\nreference = \"f\"\n",
        );
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.data.path, dir.path().join("d.csv"));
        assert_eq!(cfg.out_dir, dir.path().join("fit"));
        assert_eq!(cfg.hyper.alpha, 0.5);
        assert_eq!(cfg.hyper.beta, 10.0);
        assert_eq!(cfg.sampler.thin, 40);
        assert_eq!(cfg.data.min_individuals, 5);
        assert_eq!(cfg.covariates[0].kind, CoefficientKind::Constant);
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);

        let bad = write(dir.path(), "bad.toml", "[sampler]\nburn_in = 10\niterations = 5\n");
        assert!(RunConfig::from_file(&bad).unwrap_err().is_validation());
        let unknown = write(dir.path(), "u.toml", "[hyper]\nalhpa = 1.0\n");
        assert!(RunConfig::from_file(&unknown).is_err());
    }
}
