//! Scaled-pseudoinverse linear initializer and the NMSE metric.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::measurement::MeasurementOperator;
use crate::{Error, Result};

/// `W = η·A⁺` for the real-expanded measurement matrix `A`, with
/// `η = n / tr(A⁺A)` where `n` is the column count of `A` (the real channel
/// dimension `2S·S̄`). This makes `tr(I − W·A) = 0`.
#[derive(Debug, Clone)]
pub struct LinearInitializer {
    pub w: DMatrix<f64>,
    pub eta: f64,
}

impl LinearInitializer {
    /// Builds the initializer for an arbitrary real measurement matrix.
    pub fn from_matrix(a: &DMatrix<f64>) -> Result<Self> {
        let p = linalg::right_inverse(a)?;
        Ok(Self::from_parts(a, p.matrix))
    }

    fn from_parts(a: &DMatrix<f64>, pinv: DMatrix<f64>) -> Self {
        let eta = a.ncols() as f64 / trace_of_product(&pinv, a);
        Self { w: pinv * eta, eta }
    }

    pub fn input_len(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.w.nrows()
    }

    /// `tr(I − W·A)`.
    pub fn decorrelation_residual(&self, a: &DMatrix<f64>) -> f64 {
        a.ncols() as f64 - trace_of_product(&self.w, a)
    }

    /// `ĥ₀ = W·y` for one stacked-real observation row.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.input_len() {
            return Err(Error::Shape(format!("observation length {} != {}", y.len(), self.input_len())));
        }
        let out = &self.w * DVector::from_column_slice(y);
        Ok(out.as_slice().to_vec())
    }
}

/// `tr(P·A)` without forming the product.
fn trace_of_product(p: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let mut t = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            t += p[(i, j)] * a[(j, i)];
        }
    }
    t
}

/// Initializer from the operator's cached pseudoinverse.
pub fn build_initializer(op: &MeasurementOperator) -> LinearInitializer {
    LinearInitializer::from_parts(op.real_matrix(), op.pseudo_inverse().clone())
}

/// Linear estimate of every observation row (one row per subcarrier).
pub fn ls_estimate(rows: &[Vec<f64>], init: &LinearInitializer) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|y| init.apply(y)).collect()
}

/// `‖h − ĥ‖² / ‖h‖²`.
pub fn nmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Shape(format!("nmse of lengths {} and {}", truth.len(), estimate.len())));
    }
    let power: f64 = truth.iter().map(|x| x * x).sum();
    if power == 0.0 {
        return Err(Error::Domain("nmse reference has zero norm".into()));
    }
    let err: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / power)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn nmse_db(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    nmse(truth, estimate).map(to_db)
}

/// Empirical mean of per-sample NMSE.
pub fn batch_nmse(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::Shape(format!("batch nmse over {} and {} samples", truth.len(), estimate.len())));
    }
    let mut sum = 0.0;
    for (t, e) in truth.iter().zip(estimate) {
        sum += nmse(t, e)?;
    }
    Ok(sum / truth.len() as f64)
}
