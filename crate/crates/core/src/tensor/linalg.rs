use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude mark a matrix as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

/// Dense row-major `n×n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

/// Packed LU factors from partial pivoting: `P·A = L·U` with unit-diagonal `L`.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Build from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n, "row length must equal row count");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "matmul order mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// `y = M·x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `y = Mᵀ·x`.
    pub fn matvec_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        y[..n].fill(0.0);
        for i in 0..n {
            let xi = x[i];
            let row = &self.data[i * n..(i + 1) * n];
            for j in 0..n {
                y[j] += row[j] * xi;
            }
        }
    }

    /// Sum of each row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Euclidean norm of each column.
    pub fn column_norms(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.data[i * n + j].powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn lu(&self) -> Result<Lu> {
        let n = self.n;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax < SINGULAR_PIVOT_TOL {
                return Err(Error::SingularMatrix { pivot: pmax });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm, sign })
    }

    /// `(log|det M|, sign(det M))` from a partial-pivoting LU factorization.
    pub fn lu_logabsdet(&self) -> Result<(f64, f64)> {
        let f = self.lu()?;
        let mut logabs = 0.0;
        let mut sign = f.sign;
        for i in 0..f.n {
            let d = f.lu[i * f.n + i];
            logabs += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        Ok((logabs, sign))
    }

    pub fn determinant(&self) -> Result<f64> {
        let (l, s) = self.lu_logabsdet()?;
        Ok(s * l.exp())
    }

    pub fn inverse(&self) -> Result<SquareMatrix> {
        let f = self.lu()?;
        let n = f.n;
        let mut inv = Self::zeros(n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            // Solve L·y = P·e_j, then U·x = y.
            for i in 0..n {
                col[i] = if f.perm[i] == j { 1.0 } else { 0.0 };
            }
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= f.lu[i * n + k] * col[k];
                }
                col[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in i + 1..n {
                    s -= f.lu[i * n + k] * col[k];
                }
                col[i] = s / f.lu[i * n + i];
            }
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        Ok(inv)
    }

    /// Largest singular value, by power iteration on `MᵀM`.
    pub fn spectral_norm(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mtm = self.transpose().matmul(self);
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = mtm.matvec(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = norm;
            v = w.into_iter().map(|x| x / norm).collect();
            if (next - lambda).abs() <= 1e-15 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    /// Orthonormalize the rows by modified Gram-Schmidt. The result has
    /// determinant +1; the last row is negated when needed.
    pub fn orthonormalized(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let mut q = self.data.clone();
        for i in 0..n {
            for k in 0..i {
                let dot: f64 = (0..n).map(|j| q[i * n + j] * q[k * n + j]).sum();
                for j in 0..n {
                    q[i * n + j] -= dot * q[k * n + j];
                }
            }
            let norm = (0..n).map(|j| q[i * n + j].powi(2)).sum::<f64>().sqrt();
            if norm < SINGULAR_PIVOT_TOL {
                return Err(Error::SingularMatrix { pivot: norm });
            }
            for j in 0..n {
                q[i * n + j] /= norm;
            }
        }
        let mut out = Self { n, data: q };
        if n > 0 && out.lu_logabsdet()?.1 < 0.0 {
            for j in 0..n {
                out.data[(n - 1) * n + j] = -out.data[(n - 1) * n + j];
            }
        }
        Ok(out)
    }
}
