use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a covariate's coefficient varies with time or is a single constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    #[default]
    Functional,
    Constant,
}

/// Centering/scaling applied to a covariate at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
    pub centered: bool,
    pub scaled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateInfo {
    pub name: String,
    pub kind: CoefficientKind,
    pub scaling: Option<Scaling>,
}

impl CovariateInfo {
    pub fn functional(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CoefficientKind::Functional,
            scaling: None,
        }
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CoefficientKind::Constant,
            scaling: None,
        }
    }
}

/// One sample: the counts of every taxon for one individual at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub individual: usize,
    pub time: f64,
    pub x: Vec<f64>,
    pub counts: Vec<u32>,
}

impl Record {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&z| u64::from(z)).sum()
    }
}

/// Long-format repeated-measures count table.
///
/// Records are kept sorted by individual and then by time, so the records of
/// one individual form a contiguous range.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    individual_ids: Vec<String>,
    taxon_names: Vec<String>,
    covariates: Vec<CovariateInfo>,
    records: Vec<Record>,
    ranges: Vec<Range<usize>>,
    // n_individuals x n_taxa; true when every count of the pair is zero
    all_zero: Vec<bool>,
}

const SCALE_TOL: f64 = 1e-8;

impl LongitudinalDataset {
    pub fn new(
        individual_ids: Vec<String>,
        taxon_names: Vec<String>,
        covariates: Vec<CovariateInfo>,
        mut records: Vec<Record>,
    ) -> Result<Self> {
        let n = individual_ids.len();
        let j = taxon_names.len();
        let p = covariates.len();
        if n == 0 || j == 0 {
            return Err(Error::InvalidData("dataset needs individuals and taxa".into()));
        }
        for (k, rec) in records.iter().enumerate() {
            if rec.individual >= n {
                return Err(Error::InvalidData(format!(
                    "record {k} refers to unknown individual {}",
                    rec.individual
                )));
            }
            if rec.counts.len() != j || rec.x.len() != p {
                return Err(Error::InvalidData(format!(
                    "record {k} has {} counts and {} covariates, expected {j} and {p}",
                    rec.counts.len(),
                    rec.x.len()
                )));
            }
            if !rec.time.is_finite() || rec.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("record {k} has non-finite values")));
            }
            if rec.total() == 0 {
                return Err(Error::InvalidData(format!(
                    "record {k} (individual {}, time {}) has all-zero counts",
                    individual_ids[rec.individual], rec.time
                )));
            }
        }
        records.sort_by(|a, b| a.individual.cmp(&b.individual).then(a.time.total_cmp(&b.time)));
        let mut ranges = vec![0..0; n];
        let mut start = 0;
        for i in 0..n {
            let mut end = start;
            while end < records.len() && records[end].individual == i {
                if end > start && records[end].time == records[end - 1].time {
                    return Err(Error::InvalidData(format!(
                        "duplicate time {} for individual {}",
                        records[end].time, individual_ids[i]
                    )));
                }
                end += 1;
            }
            if end == start {
                return Err(Error::InvalidData(format!(
                    "individual {} has no records",
                    individual_ids[i]
                )));
            }
            ranges[i] = start..end;
            start = end;
        }
        for (q, info) in covariates.iter().enumerate() {
            if let Some(s) = info.scaling {
                let (mean, sd) = column_moments(&records, q);
                if s.centered && mean.abs() > SCALE_TOL {
                    return Err(Error::InvalidData(format!(
                        "covariate {} flagged centered but has mean {mean:e}",
                        info.name
                    )));
                }
                if s.scaled && (sd - 1.0).abs() > SCALE_TOL {
                    return Err(Error::InvalidData(format!(
                        "covariate {} flagged scaled but has sd {sd}",
                        info.name
                    )));
                }
            }
        }
        let mut all_zero = vec![true; n * j];
        for rec in &records {
            for (k, &z) in rec.counts.iter().enumerate() {
                if z > 0 {
                    all_zero[rec.individual * j + k] = false;
                }
            }
        }
        Ok(Self {
            individual_ids,
            taxon_names,
            covariates,
            records,
            ranges,
            all_zero,
        })
    }

    pub fn n_individuals(&self) -> usize {
        self.individual_ids.len()
    }

    pub fn n_taxa(&self) -> usize {
        self.taxon_names.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, k: usize) -> &Record {
        &self.records[k]
    }

    /// Index range of the records belonging to individual `i`.
    pub fn individual_range(&self, i: usize) -> Range<usize> {
        self.ranges[i].clone()
    }

    pub fn individual_ids(&self) -> &[String] {
        &self.individual_ids
    }

    pub fn taxon_names(&self) -> &[String] {
        &self.taxon_names
    }

    pub fn covariates(&self) -> &[CovariateInfo] {
        &self.covariates
    }

    pub fn coefficient_kinds(&self) -> Vec<CoefficientKind> {
        self.covariates.iter().map(|c| c.kind).collect()
    }

    /// True when individual `i` has a zero count for taxon `j` at every time.
    pub fn all_zero(&self, i: usize, j: usize) -> bool {
        self.all_zero[i * self.n_taxa() + j]
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Number of individuals with at least one non-zero count of each taxon.
    pub fn individuals_present(&self) -> Vec<usize> {
        let j = self.n_taxa();
        (0..j)
            .map(|k| {
                (0..self.n_individuals())
                    .filter(|&i| !self.all_zero(i, k))
                    .count()
            })
            .collect()
    }

    /// Keeps the listed taxa, dropping records that become all-zero.
    pub fn retain_taxa(&self, keep: &[usize]) -> Result<Self> {
        let names = keep.iter().map(|&k| self.taxon_names[k].clone()).collect();
        let records = self
            .records
            .iter()
            .map(|r| Record {
                individual: r.individual,
                time: r.time,
                x: r.x.clone(),
                counts: keep.iter().map(|&k| r.counts[k]).collect(),
            })
            .filter(|r| r.total() > 0)
            .collect();
        Self::new(
            self.individual_ids.clone(),
            names,
            self.covariates.clone(),
            records,
        )
    }
}

/// Pooled mean and sample standard deviation of covariate column `q`.
pub(crate) fn column_moments(records: &[Record], q: usize) -> (f64, f64) {
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.x[q]).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.x[q] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, t: f64, counts: Vec<u32>) -> Record {
        Record {
            individual: i,
            time: t,
            x: vec![0.0],
            counts,
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn sorts_and_indexes_records() {
        let data = LongitudinalDataset::new(
            ids(2),
            vec!["a".into(), "b".into()],
            vec![CovariateInfo::functional("x")],
            vec![
                rec(1, 2.0, vec![1, 0]),
                rec(0, 3.0, vec![2, 0]),
                rec(0, 1.0, vec![0, 4]),
            ],
        )
        .unwrap();
        assert_eq!(data.individual_range(0), 0..2);
        assert_eq!(data.record(0).time, 1.0);
        assert!(!data.all_zero(0, 1));
        assert!(data.all_zero(1, 1));
        assert_eq!(data.individuals_present(), vec![2, 1]);
    }

    #[test]
    fn rejects_all_zero_rows() {
        let err = LongitudinalDataset::new(
            ids(1),
            vec!["a".into()],
            vec![CovariateInfo::functional("x")],
            vec![rec(0, 1.0, vec![0])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("all-zero"));
    }

    #[test]
    fn rejects_duplicate_times_and_missing_individuals() {
        let dup = LongitudinalDataset::new(
            ids(1),
            vec!["a".into()],
            vec![CovariateInfo::functional("x")],
            vec![rec(0, 1.0, vec![1]), rec(0, 1.0, vec![2])],
        );
        assert!(dup.is_err());
        let missing = LongitudinalDataset::new(
            ids(2),
            vec!["a".into()],
            vec![CovariateInfo::functional("x")],
            vec![rec(0, 1.0, vec![1])],
        );
        assert!(missing.is_err());
    }

    #[test]
    fn checks_scaling_flags() {
        let mut info = CovariateInfo::functional("x");
        info.scaling = Some(Scaling {
            mean: 0.0,
            sd: 1.0,
            centered: true,
            scaled: true,
        });
        let mut records = vec![rec(0, 1.0, vec![1]), rec(0, 2.0, vec![1])];
        records[0].x[0] = 3.0;
        records[1].x[0] = 5.0;
        let err = LongitudinalDataset::new(ids(1), vec!["a".into()], vec![info.clone()], records)
            .unwrap_err();
        assert!(err.to_string().contains("centered"));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut records = vec![rec(0, 1.0, vec![1]), rec(0, 2.0, vec![1])];
        records[0].x[0] = -s;
        records[1].x[0] = s;
        assert!(LongitudinalDataset::new(ids(1), vec!["a".into()], vec![info], records).is_ok());
    }
}
