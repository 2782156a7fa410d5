//! Dense real linear algebra on finite-dimensional Hilbert spaces.
//!
//! Everything in the solver stack is expressed through [`VectorH`] and
//! [`DenseOperator`]. Storage is dense and row-major; the target is
//! desk-scale problems (dimension up to a few hundred), so the kernels favour
//! accuracy and simplicity: LU with partial pivoting for solves, cyclic
//! Jacobi for symmetric spectra and one-sided Jacobi for singular values.

mod eigen;
mod lu;
mod svd;
pub mod text;

use std::fmt;
use std::ops::{Add, Index, Mul, Neg, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eigen::SymmetricEigen;
pub use lu::LuFactors;
pub use text::{format_matrix, parse_matrix, read_matrix, write_matrix};

/// Relative pivot threshold of the LU factorization (relative to the
/// Frobenius norm of the matrix).
pub const PIVOT_REL_TOL: f64 = 1e-14;
/// Allowed asymmetry of an operator flagged self-adjoint, relative to its norm.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;
/// Allowed negative eigenvalue of an operator claimed PSD, relative to its norm.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Element of the ambient real Hilbert space, stored as coordinates in an
/// orthonormal basis.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorH(Vec<f64>);

impl VectorH {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter(
                "vector dimension must be positive".into(),
            ));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector coordinates"));
        }
        Ok(VectorH(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        VectorH(vec![0.0; dim])
    }

    /// Unit vector along coordinate `i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        VectorH(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, s: f64) -> VectorH {
        VectorH(self.0.iter().map(|x| s * x).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &VectorH) {
        debug_assert_eq!(self.dim(), x.dim());
        for (yi, xi) in self.0.iter_mut().zip(&x.0) {
            *yi += a * xi;
        }
    }

    pub fn distance(&self, other: &VectorH) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn from_vec(v: Vec<f64>) -> Self {
        VectorH(v)
    }

    fn check_dim(&self, other: &VectorH) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for VectorH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl Index<usize> for VectorH {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<VectorH> for Vec<f64> {
    fn from(v: VectorH) -> Self {
        v.0
    }
}

impl<'a> Add<&'a VectorH> for &'a VectorH {
    type Output = VectorH;
    fn add(self, rhs: &VectorH) -> VectorH {
        assert_eq!(self.dim(), rhs.dim(), "vector dimensions differ");
        VectorH(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl<'a> Sub<&'a VectorH> for &'a VectorH {
    type Output = VectorH;
    fn sub(self, rhs: &VectorH) -> VectorH {
        assert_eq!(self.dim(), rhs.dim(), "vector dimensions differ");
        VectorH(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &VectorH {
    type Output = VectorH;
    fn neg(self) -> VectorH {
        VectorH(self.0.iter().map(|x| -x).collect())
    }
}

impl Mul<&VectorH> for f64 {
    type Output = VectorH;
    fn mul(self, rhs: &VectorH) -> VectorH {
        rhs.scaled(self)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Structural flags carried by an operator. Setting a flag through
/// [`DenseOperator::with_flags`] verifies it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorFlags {
    pub self_adjoint: bool,
    pub psd_claimed: bool,
}

/// Square real matrix with verified structural flags and a lazily computed,
/// thread-safe LU factorization.
#[derive(Clone)]
pub struct DenseOperator {
    dim: usize,
    data: Vec<f64>,
    flags: OperatorFlags,
    lu: OnceLock<Result<LuFactors>>,
}

impl fmt::Debug for DenseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseOperator")
            .field("dim", &self.dim)
            .field("rows", &self.rows())
            .field("flags", &self.flags)
            .finish()
    }
}

impl PartialEq for DenseOperator {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.data == other.data && self.flags == other.flags
    }
}

impl DenseOperator {
    /// Builds an operator from row-major data.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be positive".into(),
            ));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        Ok(Self::from_parts(dim, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(n, data)
    }

    /// Builds an operator whose `j`-th column is `columns[j]`.
    pub fn from_columns(columns: &[VectorH]) -> Result<Self> {
        let n = columns.len();
        let mut data = vec![0.0; n * n];
        for (j, col) in columns.iter().enumerate() {
            if col.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.dim(),
                });
            }
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
        Self::from_row_major(n, data)
    }

    pub(crate) fn from_parts(dim: usize, data: Vec<f64>) -> Self {
        DenseOperator {
            dim,
            data,
            flags: OperatorFlags::default(),
            lu: OnceLock::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diag(&vec![1.0; dim]).with_trusted_flags(OperatorFlags {
            self_adjoint: true,
            psd_claimed: true,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_parts(dim, vec![0.0; dim * dim]).with_trusted_flags(OperatorFlags {
            self_adjoint: true,
            psd_claimed: true,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        let psd = values.iter().all(|v| *v >= 0.0);
        Self::from_parts(n, data).with_trusted_flags(OperatorFlags {
            self_adjoint: true,
            psd_claimed: psd,
        })
    }

    /// Attaches structural flags after verifying them.
    pub fn with_flags(mut self, flags: OperatorFlags) -> Result<Self> {
        if flags.self_adjoint || flags.psd_claimed {
            let scale = operator_norm(&self);
            let asym = self.max_asymmetry();
            if flags.self_adjoint && asym > SYMMETRY_REL_TOL * scale {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
            if flags.psd_claimed {
                if asym > SYMMETRY_REL_TOL * scale {
                    return Err(Error::NotSymmetric { asymmetry: asym });
                }
                let lambda_min = symmetric_eigen(&self.symmetric_part())?.values[0];
                if lambda_min < -PSD_REL_TOL * scale {
                    return Err(Error::NonPsdOperator { lambda_min });
                }
            }
        }
        self.flags = flags;
        Ok(self)
    }

    pub(crate) fn with_trusted_flags(mut self, flags: OperatorFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn flags(&self) -> OperatorFlags {
        self.flags
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> VectorH {
        VectorH((0..self.dim).map(|i| self.get(i, j)).collect())
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &VectorH) -> Result<VectorH> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(self.apply_unchecked(x.as_slice()))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> VectorH {
        VectorH((0..self.dim).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn transpose(&self) -> DenseOperator {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self::from_parts(n, data).with_trusted_flags(self.flags)
    }

    pub fn matmul(&self, other: &DenseOperator) -> Result<DenseOperator> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(Self::from_parts(n, data))
    }

    /// `self + shift * I`. A nonnegative shift preserves the PSD flag.
    pub fn shifted(&self, shift: f64) -> DenseOperator {
        let n = self.dim;
        let mut data = self.data.clone();
        for i in 0..n {
            data[i * n + i] += shift;
        }
        let flags = OperatorFlags {
            self_adjoint: self.flags.self_adjoint,
            psd_claimed: self.flags.psd_claimed && shift >= 0.0,
        };
        Self::from_parts(n, data).with_trusted_flags(flags)
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetric_part(&self) -> DenseOperator {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        Self::from_parts(n, data).with_trusted_flags(OperatorFlags {
            self_adjoint: true,
            psd_claimed: false,
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Cached LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<&LuFactors> {
        self.lu
            .get_or_init(|| LuFactors::factor(self, PIVOT_REL_TOL))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Computes the factorization now so later concurrent readers share it.
    pub fn prefactor(self) -> Self {
        let _ = self.lu();
        self
    }
}

/// Inner product `Σ uᵢ vᵢ`.
pub fn inner(u: &VectorH, v: &VectorH) -> Result<f64> {
    u.check_dim(v)?;
    Ok(dot(u.as_slice(), v.as_slice()))
}

pub fn norm(u: &VectorH) -> f64 {
    u.norm()
}

/// Solves `A x = b`, reusing the cached factorization of `a`.
pub fn solve_linear(a: &DenseOperator, b: &VectorH) -> Result<VectorH> {
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.lu()?.solve(b))
}

/// Like [`solve_linear`] with an explicit relative pivot threshold; bypasses
/// the cache.
pub fn solve_linear_with(a: &DenseOperator, b: &VectorH, pivot_rel_tol: f64) -> Result<VectorH> {
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(LuFactors::factor(a, pivot_rel_tol)?.solve(b))
}

/// Singular values in descending order.
pub fn singular_values(a: &DenseOperator) -> Vec<f64> {
    svd::singular_values(a)
}

/// Largest singular value (the spectral norm).
pub fn operator_norm(a: &DenseOperator) -> f64 {
    singular_values(a)[0]
}

pub fn smallest_singular_value(a: &DenseOperator) -> f64 {
    *singular_values(a)
        .last()
        .expect("operator dimension is positive")
}

/// `σ_max / σ_min`; infinite for singular operators.
pub fn condition_number(a: &DenseOperator) -> f64 {
    let s = singular_values(a);
    let min = *s.last().unwrap();
    if min == 0.0 {
        f64::INFINITY
    } else {
        s[0] / min
    }
}

/// Eigen-decomposition `A = Q Λ Qᵀ` of a symmetric operator, eigenvalues
/// ascending.
pub fn symmetric_eigen(a: &DenseOperator) -> Result<SymmetricEigen> {
    let asym = a.max_asymmetry();
    let scale = a.frobenius_norm();
    if asym > SYMMETRY_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(eigen::jacobi_eigen(a))
}
