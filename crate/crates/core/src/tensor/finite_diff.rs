//! Central-difference oracles. Every analytic derivative in the crate is
//! checked against one of these.

use super::SquareMatrix;

/// Default step: balances truncation against rounding in `f64`.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Jacobian of a square map by central differences:
/// column `j` is `(f(x+εe_j) − f(x−εe_j)) / 2ε`.
pub fn finite_diff_jacobian<F>(f: F, x0: &[f64], eps: f64) -> SquareMatrix
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut jac = SquareMatrix::zeros(n);
    let mut x = x0.to_vec();
    for j in 0..n {
        x[j] = x0[j] + eps;
        let plus = f(&x);
        x[j] = x0[j] - eps;
        let minus = f(&x);
        x[j] = x0[j];
        assert_eq!(plus.len(), n, "finite_diff_jacobian needs a square map");
        for i in 0..n {
            jac.set(i, j, (plus[i] - minus[i]) / (2.0 * eps));
        }
    }
    jac
}

/// Gradient of a scalar function by central differences.
pub fn finite_diff_gradient<F>(f: F, x0: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    (0..x0.len())
        .map(|j| {
            x[j] = x0[j] + eps;
            let plus = f(&x);
            x[j] = x0[j] - eps;
            let minus = f(&x);
            x[j] = x0[j];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Diagonal of the Hessian: `(f(x+εe_j) − 2f(x) + f(x−εe_j)) / ε²`.
pub fn finite_diff_hessian_diag<F>(f: F, x0: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let center = f(x0);
    let mut x = x0.to_vec();
    (0..x0.len())
        .map(|j| {
            x[j] = x0[j] + eps;
            let plus = f(&x);
            x[j] = x0[j] - eps;
            let minus = f(&x);
            x[j] = x0[j];
            (plus - 2.0 * center + minus) / (eps * eps)
        })
        .collect()
}
