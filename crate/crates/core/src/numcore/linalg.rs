use nalgebra::DMatrix;

use super::Tensor2;
use crate::error::{DeqError, Result};

/// Minimizer of `‖A x − b‖² + λ‖x‖²` from the normal equations
/// `(AᵀA + λI) x = Aᵀb`, solved by LU with partial pivoting.
///
/// `b` may carry several right-hand sides as columns.
pub fn ridge_lstsq(a: &Tensor2, b: &Tensor2, lambda: f64) -> Result<Tensor2> {
    if a.rows() != b.rows() {
        return Err(DeqError::shape("ridge_lstsq", a.shape(), b.shape()));
    }
    if !(lambda >= 0.0) {
        return Err(DeqError::config(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let n = a.cols();
    let mut normal = a.t_matmul(a)?;
    for i in 0..n {
        let v = normal.get(i, i) + lambda;
        normal.set(i, i, v);
    }
    let rhs = a.t_matmul(b)?;
    solve_dense(&normal, &rhs).map_err(|_| {
        DeqError::Numeric(format!(
            "normal equations are singular (lambda = {lambda}); use lambda > 0"
        ))
    })
}

/// Solves the square system `M X = R`.
pub fn solve_dense(m: &Tensor2, r: &Tensor2) -> Result<Tensor2> {
    if m.rows() != m.cols() || m.rows() != r.rows() {
        return Err(DeqError::shape("solve_dense", m.shape(), r.shape()));
    }
    let n = m.rows();
    let lu = DMatrix::from_row_slice(n, n, m.data()).lu();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if n > 0 && min_pivot <= 1e-14 * scale {
        return Err(DeqError::Numeric("singular matrix".into()));
    }
    let rhs = DMatrix::from_row_slice(n, r.cols(), r.data());
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| DeqError::Numeric("singular matrix".into()))?;
    let mut out = Tensor2::zeros(n, r.cols());
    for i in 0..n {
        for j in 0..r.cols() {
            out.set(i, j, x[(i, j)]);
        }
    }
    Ok(out)
}
