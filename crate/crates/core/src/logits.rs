use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-9;

/// `N x K` row-stochastic matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Array2<f64>);

impl LogitMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (n, row) in values.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::DimensionMismatch(format!(
                    "row {n} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::DimensionMismatch(format!(
                    "row {n} sums to {sum}, not 1"
                )));
            }
        }
        Ok(LogitMatrix(values))
    }

    pub(crate) fn from_trusted(values: Array2<f64>) -> Self {
        debug_assert!(LogitMatrix::new(values.clone()).is_ok());
        LogitMatrix(values)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.0.row(n)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// One-hot encoding of `labels` with `k` columns.
pub fn one_hot(labels: &[u32], k: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), k));
    for (n, &l) in labels.iter().enumerate() {
        y[[n, l as usize]] = 1.0;
    }
    y
}
