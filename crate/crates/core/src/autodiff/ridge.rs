//! Implicit differentiation of the ridge solve.
//!
//! With `A = λI + XᵀX` and `w = A⁻¹Xᵀy`, a cotangent `w̄` pulls back through
//! one extra solve `s = A⁻¹w̄`:
//!
//! ```text
//! ȳ = X s
//! λ̄ = −sᵀw
//! X̄ = (y − Xw) sᵀ − (X s) wᵀ
//! ```

use crate::error::{Error, Result};
use crate::linalg::{ridge_factor_solve, Cholesky, DenseMatrix, DenseVector};

/// Cotangents of the ridge inputs.
#[derive(Clone, Debug)]
pub struct RidgeCotangents {
    pub x_bar: DenseMatrix,
    pub y_bar: DenseVector,
    pub lambda_bar: f64,
}

/// Pulls `w_bar` back to `(X̄, ȳ, λ̄)`. Refactors `λI + XᵀX`; see
/// [`adjoint_with_factor`] to reuse an existing factorization.
pub fn adjoint_ridge_solve(
    x: &DenseMatrix,
    y: &DenseVector,
    lambda_pi: f64,
    w: &DenseVector,
    w_bar: &DenseVector,
) -> Result<RidgeCotangents> {
    let sol = ridge_factor_solve(x, y, lambda_pi)?;
    adjoint_with_factor(&sol.factor, x, y, w, w_bar)
}

pub fn adjoint_with_factor(
    factor: &Cholesky,
    x: &DenseMatrix,
    y: &[f64],
    w: &[f64],
    w_bar: &[f64],
) -> Result<RidgeCotangents> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != p || w_bar.len() != p || factor.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "ridge adjoint: X {n}x{p}, y {}, w {}, w_bar {}, factor {}",
            y.len(),
            w.len(),
            w_bar.len(),
            factor.dim()
        )));
    }
    if w_bar.iter().all(|&v| v == 0.0) {
        return Ok(RidgeCotangents {
            x_bar: DenseMatrix::zeros(n, p),
            y_bar: DenseVector::zeros(n),
            lambda_bar: 0.0,
        });
    }
    let s = factor.solve(w_bar)?;
    let xs = x.matvec(&s)?;
    let xw = x.matvec(w)?;
    let lambda_bar = -s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let mut x_bar = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let r = y[i] - xw[i];
        let q = xs[i];
        for ((o, &sj), &wj) in x_bar.row_mut(i).iter_mut().zip(s.iter()).zip(w) {
            *o = r * sj - q * wj;
        }
    }
    Ok(RidgeCotangents {
        x_bar,
        y_bar: xs,
        lambda_bar,
    })
}
