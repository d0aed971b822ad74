//! Ridge-regularised linear least squares via the SVD of the augmented system
//! `[A; sqrt(lambda) I] alpha = [b; 0]`.

pub use nalgebra::DMatrix;
use nalgebra::{DVector, SVD};

use crate::error::{Error, Result};

/// Condition numbers above this mark the system as numerically rank deficient.
pub const RANK_DEFICIENT_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rows: usize,
    cols: usize,
    tolerance: f64,
    condition: f64,
}

impl LeastSquares {
    pub fn new(a: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("least squares needs a non-empty design matrix"));
        }
        if !(ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be non-negative, got {ridge}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("design matrix has non-finite entries".into()));
        }
        let aug = if ridge > 0.0 {
            let mut aug = DMatrix::zeros(rows + cols, cols);
            aug.view_mut((0, 0), (rows, cols)).copy_from(a);
            let s = ridge.sqrt();
            for k in 0..cols {
                aug[(rows + k, k)] = s;
            }
            aug
        } else {
            a.clone()
        };
        let svd = SVD::new(aug, true, true);
        let sv = &svd.singular_values;
        let smax = sv.max();
        let smin = if rows + if ridge > 0.0 { cols } else { 0 } < cols {
            0.0
        } else {
            sv.min()
        };
        let tolerance = smax * (rows.max(cols) as f64) * f64::EPSILON;
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        Ok(Self {
            svd,
            rows,
            cols,
            tolerance,
            condition,
        })
    }

    /// `sigma_max / sigma_min` of the (augmented) system.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn is_rank_deficient(&self) -> bool {
        !(self.condition < RANK_DEFICIENT_CONDITION)
    }

    /// Minimum-norm minimiser of `|A alpha - b|^2 + lambda |alpha|^2`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("least squares right-hand side", self.rows, b.len())?;
        let aug_rows = self.svd.u.as_ref().map_or(self.rows, |u| u.nrows());
        let mut rhs = DVector::zeros(aug_rows);
        rhs.rows_mut(0, self.rows).copy_from_slice(b);
        let x = self
            .svd
            .solve(&rhs, self.tolerance)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        debug_assert_eq!(x.len(), self.cols);
        Ok(x.iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coeffs: Vec<f64>,
    pub condition: f64,
    pub rank_deficient: bool,
}

/// Solve `min |A alpha - b|^2 + ridge |alpha|^2`; rank-deficient systems get
/// the minimum-norm solution and are flagged.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &[f64], ridge: f64) -> Result<LstsqSolution> {
    let ls = LeastSquares::new(a, ridge)?;
    let coeffs = ls.solve(b)?;
    if ls.is_rank_deficient() {
        log::debug!("least squares system is ill conditioned (condition {:.3e})", ls.condition_number());
    }
    Ok(LstsqSolution {
        coeffs,
        condition: ls.condition_number(),
        rank_deficient: ls.is_rank_deficient(),
    })
}
