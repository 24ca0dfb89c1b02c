//! Cubic B-spline basis for the time-varying coefficients.
//!
//! A coefficient function is represented as `beta(t) = b(t) . beta_star`
//! where `b(t) = [1, b_1(t), ..., b_D(t)]`. The `b_d` are the cubic
//! B-splines with `D` degrees of freedom "without intercept": the full
//! clamped cubic basis has `D + 1` functions and the first one is dropped.
//! Since the full basis is a partition of unity, prepending the constant
//! keeps the span equal to that of the full basis.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spline degree. Only cubic splines are supported.
pub const DEGREE: usize = 3;

/// Knot placement rule recorded in chain metadata.
pub const KNOT_RULE: &str = "quantiles-of-distinct-times";

#[derive(Debug, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    df: usize,
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    knot_rule: String,
    #[serde(skip)]
    clamped: AtomicUsize,
}

impl Clone for SplineBasis {
    fn clone(&self) -> Self {
        Self {
            degree: self.degree,
            df: self.df,
            interior_knots: self.interior_knots.clone(),
            boundary: self.boundary,
            knot_rule: self.knot_rule.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for SplineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.degree == other.degree
            && self.df == other.df
            && self.interior_knots == other.interior_knots
            && self.boundary == other.boundary
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SplineBasis {
    /// Builds the basis from the pooled observed times.
    ///
    /// Boundary knots sit at the extreme observed times; the `D - 3`
    /// interior knots sit at equally spaced quantiles of the distinct times.
    pub fn build(observed_times: &[f64], df: usize) -> Result<Self> {
        if df < 4 {
            return Err(Error::InsufficientDegreesOfFreedom(df));
        }
        if observed_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidBasis("non-finite observation time".into()));
        }
        let mut distinct = observed_times.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::InvalidBasis(
                "at least two distinct observation times are required".into(),
            ));
        }
        let n_interior = df - DEGREE;
        let interior_knots: Vec<f64> = (1..=n_interior)
            .map(|k| quantile_sorted(&distinct, k as f64 / (n_interior + 1) as f64))
            .collect();
        let boundary = (distinct[0], distinct[distinct.len() - 1]);
        Self::from_knots(df, interior_knots, boundary)
    }

    /// Reconstructs a basis from serialized knots.
    pub fn from_knots(df: usize, interior_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        if df < 4 {
            return Err(Error::InsufficientDegreesOfFreedom(df));
        }
        if !(boundary.0 < boundary.1) {
            return Err(Error::InvalidBasis(format!(
                "boundary ({}, {}) is empty",
                boundary.0, boundary.1
            )));
        }
        if interior_knots.len() != df - DEGREE {
            return Err(Error::InvalidBasis(format!(
                "expected {} interior knots for df = {df}, got {}",
                df - DEGREE,
                interior_knots.len()
            )));
        }
        if interior_knots.windows(2).any(|w| w[0] > w[1])
            || interior_knots
                .iter()
                .any(|&k| k <= boundary.0 || k >= boundary.1)
        {
            return Err(Error::InvalidBasis(
                "interior knots must be sorted and strictly inside the boundary".into(),
            ));
        }
        Ok(Self {
            degree: DEGREE,
            df,
            interior_knots,
            boundary,
            knot_rule: KNOT_RULE.to_string(),
            clamped: AtomicUsize::new(0),
        })
    }

    pub fn knot_rule(&self) -> &str {
        &self.knot_rule
    }

    /// Re-checks a basis that came from deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.degree != DEGREE {
            return Err(Error::InvalidBasis(format!("unsupported degree {}", self.degree)));
        }
        Self::from_knots(self.df, self.interior_knots.clone(), self.boundary).map(|_| ())
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Length of a basis row, `D + 1`.
    pub fn row_len(&self) -> usize {
        self.df + 1
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    /// Number of evaluations that fell outside the boundary and were clamped.
    pub fn clamp_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// The full clamped knot vector, boundary knots repeated `degree + 1` times.
    pub fn knot_vector(&self) -> Vec<f64> {
        let mut knots = Vec::with_capacity(self.interior_knots.len() + 2 * (DEGREE + 1));
        knots.extend(std::iter::repeat_n(self.boundary.0, DEGREE + 1));
        knots.extend_from_slice(&self.interior_knots);
        knots.extend(std::iter::repeat_n(self.boundary.1, DEGREE + 1));
        knots
    }

    fn clamp(&self, t: f64) -> f64 {
        let (lo, hi) = self.boundary;
        if t < lo || t > hi || t.is_nan() {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            if t.is_nan() || t < lo {
                lo
            } else {
                hi
            }
        } else {
            t
        }
    }

    /// All `D + 1` functions of the full cubic basis at `t` (before the first
    /// function is dropped). Sums to one.
    pub fn evaluate_full(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.df + 1];
        self.full_into(self.clamp(t), &mut out);
        out
    }

    fn full_into(&self, t: f64, out: &mut [f64]) {
        let knots = self.knot_vector();
        let n_basis = self.df + 1;
        // Span index mu with knots[mu] <= t < knots[mu + 1]; the right
        // boundary belongs to the last non-degenerate span.
        let mut mu = DEGREE;
        while mu < n_basis - 1 && t >= knots[mu + 1] {
            mu += 1;
        }
        // Cox-de Boor triangle over the DEGREE + 1 non-zero functions.
        let mut local = [0.0f64; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        local[0] = 1.0;
        for k in 1..=DEGREE {
            left[k] = t - knots[mu + 1 - k];
            right[k] = knots[mu + k] - t;
            let mut saved = 0.0;
            for r in 0..k {
                let denom = right[r + 1] + left[k - r];
                let temp = if denom == 0.0 { 0.0 } else { local[r] / denom };
                local[r] = saved + right[r + 1] * temp;
                saved = left[k - r] * temp;
            }
            local[k] = saved;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, value) in local.iter().enumerate() {
            out[mu - DEGREE + r] = *value;
        }
    }

    /// The basis row `[1, b_1(t), ..., b_D(t)]`. Times outside the boundary
    /// are clamped to it.
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.row_len()];
        self.evaluate_into(t, &mut row);
        row
    }

    pub fn evaluate_into(&self, t: f64, row: &mut [f64]) {
        assert_eq!(row.len(), self.row_len(), "basis row has wrong length");
        self.full_into(self.clamp(t), row);
        row[0] = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive definition, used as an independent oracle.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, t: f64, right_end: f64) -> f64 {
        if k == 0 {
            let inside = knots[i] <= t && t < knots[i + 1];
            // The last non-empty span is closed on the right.
            let at_end = t == right_end && knots[i + 1] == right_end && knots[i] < knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut value = 0.0;
        let d1 = knots[i + k] - knots[i];
        if d1 > 0.0 {
            value += (t - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, t, right_end);
        }
        let d2 = knots[i + k + 1] - knots[i + 1];
        if d2 > 0.0 {
            value += (knots[i + k + 1] - t) / d2 * cox_de_boor(knots, i + 1, k - 1, t, right_end);
        }
        value
    }

    fn uniform_times() -> Vec<f64> {
        (0..=10).map(f64::from).collect()
    }

    #[test]
    fn symmetric_grid_places_knot_at_median() {
        let basis = SplineBasis::build(&uniform_times(), 4).unwrap();
        assert_eq!(basis.interior_knots(), &[5.0]);
        assert_eq!(basis.boundary(), (0.0, 10.0));
    }

    #[test]
    fn rejects_too_few_degrees_of_freedom() {
        let err = SplineBasis::build(&uniform_times(), 3).unwrap_err();
        assert!(err.to_string().contains("insufficient degrees of freedom"));
    }

    #[test]
    fn rejects_single_distinct_time() {
        assert!(SplineBasis::build(&[2.0, 2.0, 2.0], 4).is_err());
    }

    #[test]
    fn row_has_leading_one() {
        let basis = SplineBasis::build(&[0.3, 1.7, 2.2, 8.0, 9.1], 6).unwrap();
        for t in [0.3, 1.0, 5.0, 9.1] {
            let row = basis.evaluate(t);
            assert_eq!(row.len(), 7);
            assert_eq!(row[0], 1.0);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn left_boundary_row_matches_reference() {
        let basis = SplineBasis::build(&uniform_times(), 5).unwrap();
        let knots = basis.knot_vector();
        let t = 0.0;
        let first_full = cox_de_boor(&knots, 0, 3, t, 10.0);
        let row = basis.evaluate(t);
        let spline_sum: f64 = row[1..].iter().sum();
        assert!((spline_sum - (1.0 - first_full)).abs() < 1e-12);
        // At the left boundary only the dropped function is non-zero.
        assert!((first_full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_coefficients_give_constant_function() {
        let basis = SplineBasis::build(&uniform_times(), 4).unwrap();
        let coef = [0.37, 0.0, 0.0, 0.0, 0.0];
        for t in [0.0, 2.5, 7.3, 10.0] {
            let value: f64 = basis.evaluate(t).iter().zip(coef).map(|(b, c)| b * c).sum();
            assert_eq!(value, 0.37);
        }
    }

    #[test]
    fn partition_of_unity_at_random_points() {
        let basis = SplineBasis::build(&[0.0, 1.1, 2.0, 3.5, 4.4, 6.0, 9.5, 10.0], 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = rng.random_range(0.0..=10.0);
            let sum: f64 = basis.evaluate_full(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_recursive_definition() {
        let times: Vec<f64> = (0..40).map(|i| (i as f64 * 0.731).sin().abs() * 12.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for df in [4, 5, 8] {
            let basis = SplineBasis::build(&times, df).unwrap();
            let knots = basis.knot_vector();
            let (lo, hi) = basis.boundary();
            let mut max_dev: f64 = 0.0;
            for n in 0..1000 {
                let t = if n == 0 { hi } else { rng.random_range(lo..=hi) };
                let full = basis.evaluate_full(t);
                for (i, value) in full.iter().enumerate() {
                    max_dev = max_dev.max((value - cox_de_boor(&knots, i, 3, t, hi)).abs());
                }
            }
            assert!(max_dev < 1e-10, "df {df}: deviation {max_dev}");
        }
    }

    #[test]
    fn clamps_outside_boundary_and_counts() {
        let basis = SplineBasis::build(&uniform_times(), 4).unwrap();
        assert_eq!(basis.evaluate(-1.0), basis.evaluate(0.0));
        assert_eq!(basis.evaluate(12.0), basis.evaluate(10.0));
        assert_eq!(basis.clamp_count(), 2);
    }

    #[test]
    fn second_derivative_is_continuous_across_knot() {
        let basis = SplineBasis::build(&uniform_times(), 4).unwrap();
        let h = 1e-3;
        let second = |t: f64| -> Vec<f64> {
            let (a, b, c) = (basis.evaluate(t - h), basis.evaluate(t), basis.evaluate(t + h));
            (0..a.len()).map(|i| (a[i] - 2.0 * b[i] + c[i]) / (h * h)).collect()
        };
        let below = second(5.0 - 0.01);
        let above = second(5.0 + 0.01);
        for (x, y) in below.iter().zip(&above) {
            assert!((x - y).abs() < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn serde_round_trip_preserves_evaluation() {
        let basis = SplineBasis::build(&[0.2, 3.0, 4.0, 7.5, 9.0], 6).unwrap();
        let json = serde_json::to_string(&basis).unwrap();
        let back: SplineBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, basis);
        assert_eq!(back.evaluate(4.2), basis.evaluate(4.2));
    }
}
