use super::{singular_values, DenseOperator, VectorH};
use crate::error::{Error, Result};

/// Packed `PA = LU` factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct LuFactors {
    dim: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
}

impl LuFactors {
    /// Factors `a`; a pivot smaller than `pivot_rel_tol * ‖a‖_F` is treated
    /// as singular.
    pub fn factor(a: &DenseOperator, pivot_rel_tol: f64) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.as_row_major().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = pivot_rel_tol * a.frobenius_norm();
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= threshold || pivot == 0.0 {
                let s = singular_values(a);
                let smin = *s.last().unwrap();
                let condition = if smin == 0.0 {
                    f64::INFINITY
                } else {
                    s[0] / smin
                };
                return Err(Error::SingularOperator { pivot, condition });
            }
            min_pivot = min_pivot.min(pivot);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = lu[k * n + k];
            for i in (k + 1)..n {
                let m = lu[i * n + k] / d;
                lu[i * n + k] = m;
                if m != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= m * lu[k * n + j];
                    }
                }
            }
        }
        Ok(LuFactors {
            dim: n,
            lu,
            perm,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest pivot magnitude encountered.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, b: &VectorH) -> VectorH {
        VectorH::from_vec(self.solve_slice(b.as_slice()))
    }

    pub(crate) fn solve_slice(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, xj)| l * xj).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(u, xj)| u * xj).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}
