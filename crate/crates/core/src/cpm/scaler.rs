use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widening applied to a feature whose training range is a single value.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

/// Per-feature affine map of the training range onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Features that were constant in the fit data and had their range widened.
    pub degenerate: Vec<bool>,
}

impl MinMaxScaler {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut n = 0usize;
        for row in rows {
            if row.len() != dim {
                return Err(Error::invalid(format!("scaler row has {} features, expected {dim}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid("non-finite value in scaler fit data"));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit a scaler on no data"));
        }
        let mut degenerate = vec![false; dim];
        for j in 0..dim {
            if max[j] <= min[j] {
                max[j] = min[j] + DEGENERATE_WIDTH;
                degenerate[j] = true;
            }
        }
        Ok(Self { min, max, degenerate })
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.iter().zip(&max).any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a)) {
            return Err(Error::invalid("scaler bounds must be finite with max > min"));
        }
        let degenerate = vec![false; min.len()];
        Ok(Self { min, max, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn apply_one(&self, j: usize, v: f64) -> f64 {
        (v - self.min[j]) / (self.max[j] - self.min[j])
    }

    pub fn invert_one(&self, j: usize, v: f64) -> f64 {
        v * (self.max[j] - self.min[j]) + self.min[j]
    }

    /// Scales a row-major block of rows in place.
    pub fn apply_in_place(&self, data: &mut [f64]) {
        let d = self.dim();
        for (i, v) in data.iter_mut().enumerate() {
            *v = self.apply_one(i % d, *v);
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.invert_one(j % self.dim(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_and_apply() {
        let rows = [[2.0], [4.0], [6.0]];
        let s = MinMaxScaler::fit(rows.iter().map(|r| &r[..]), 1).unwrap();
        assert_eq!(s.apply(&[4.0]), vec![0.5]);
        assert_eq!(s.apply(&[2.0]), vec![0.0]);
        assert_eq!(s.apply(&[6.0]), vec![1.0]);
    }

    #[test]
    fn constant_feature_is_flagged() {
        let rows = [[1.0, 3.0], [2.0, 3.0]];
        let s = MinMaxScaler::fit(rows.iter().map(|r| &r[..]), 2).unwrap();
        assert_eq!(s.degenerate, vec![false, true]);
        assert!(s.max[1] > s.min[1]);
    }

    #[test]
    fn empty_fit_fails() {
        assert!(MinMaxScaler::fit(std::iter::empty(), 3).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(lo in -10.0f64..0.0, span in 0.1f64..10.0, xs in prop::collection::vec(-20.0f64..20.0, 100)) {
            let s = MinMaxScaler::from_bounds(vec![lo], vec![lo + span]).unwrap();
            for x in xs {
                let back = s.invert_one(0, s.apply_one(0, x));
                prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
