//! Moore–Penrose pseudoinverse via SVD.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// A pseudoinverse together with the rank and conditioning it was computed at.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    /// `σ_max / σ_min` over all singular values (∞ when one is zero).
    pub condition: f64,
}

/// Singular values below `ε · max(m, n) · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> PseudoInverse {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.iter().cloned().fold(0.0, f64::max);
    let s_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = f64::EPSILON * rows.max(cols) as f64 * s_max;
    let rank = sigma.iter().filter(|&&s| s > tol).count();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    // A⁺ = V Σ⁺ Uᵀ
    let mut vs = v_t.transpose();
    for (j, &s) in sigma.iter().enumerate() {
        let inv = if s > tol { 1.0 / s } else { 0.0 };
        vs.column_mut(j).scale_mut(inv);
    }
    let matrix = vs * u.transpose();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    PseudoInverse { matrix, rank, condition }
}

/// Pseudoinverse of a matrix that must have full row rank.
pub fn right_inverse(m: &DMatrix<f64>) -> Result<PseudoInverse> {
    let p = pseudo_inverse(m);
    if p.rank < m.nrows() {
        return Err(Error::RankDeficient { rank: p.rank, rows: m.nrows(), condition: p.condition });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(a: &DMatrix<f64>) -> f64 {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn penrose_conditions_wide() {
        let a = DMatrix::from_row_slice(3, 5, &[
            1.0, 2.0, 0.0, -1.0, 3.0,
            0.5, -1.0, 4.0, 2.0, 0.0,
            -2.0, 0.0, 1.0, 1.0, 1.0,
        ]);
        let p = right_inverse(&a).unwrap();
        assert_eq!(p.rank, 3);
        let x = &p.matrix;
        assert!(frob(&(&a * x * &a - &a)) < 1e-12);
        assert!(frob(&(x * &a * x - x)) < 1e-12);
        assert!(frob(&((&a * x).transpose() - &a * x)) < 1e-12);
        assert!(frob(&((x * &a).transpose() - x * &a)) < 1e-12);
        // Full row rank: A A⁺ = I, and A⁺ = Aᵀ (A Aᵀ)⁻¹.
        assert!(frob(&(&a * x - DMatrix::identity(3, 3))) < 1e-12);
        let normal = a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
        assert!(frob(&(normal - x)) < 1e-12);
    }

    #[test]
    fn rank_deficiency_reported() {
        let a = DMatrix::from_row_slice(3, 4, &[
            1.0, 2.0, 3.0, 4.0,
            2.0, 4.0, 6.0, 8.0,
            0.0, 1.0, 0.0, 1.0,
        ]);
        match right_inverse(&a) {
            Err(Error::RankDeficient { rank, rows, .. }) => assert_eq!((rank, rows), (2, 3)),
            other => panic!("{other:?}"),
        }
    }
}
