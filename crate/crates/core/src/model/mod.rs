//! The equation `F(v) = Lv + g(v) = 0`, its regularized and preconditioned
//! forms, and the certificates for the hypotheses the solvers rely on.

mod certificates;
mod nonlinear;

pub use certificates::{
    ball_samples, check_resolvent_bound, check_sector, check_trust_condition, estimate_m1,
    fd_jacobian_check, monotonicity_certificate, Certificate, CertificateKind, Sector,
    DEFAULT_FD_STEP, DEFAULT_SECTOR_GRID, SINGULAR_LINEARIZATION_TOL,
};
pub use nonlinear::{BuiltinG, GBounds, NonlinearMap, Nonlinearity};

use crate::error::{Error, Result};
use crate::linalg::{DenseOperator, VectorH};

/// A problem instance: the operator `L`, the nonlinearity `g`, the start
/// point `u₀` with its locality ball radius `R`, and the current
/// regularization `ε ≥ 0` (the solvers work with `L_ε = L + εI`).
#[derive(Clone, Debug)]
pub struct DsmProblem {
    l: DenseOperator,
    g: NonlinearMap,
    u0: VectorH,
    radius: f64,
    epsilon: f64,
    shifted: DenseOperator,
}

impl DsmProblem {
    pub fn new(
        l: DenseOperator,
        g: NonlinearMap,
        u0: VectorH,
        radius: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let n = l.dim();
        for got in [g.dim(), u0.dim()] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        let shifted = if epsilon == 0.0 {
            l.clone()
        } else {
            l.shifted(epsilon)
        };
        Ok(DsmProblem {
            l,
            g,
            u0,
            radius,
            epsilon,
            shifted,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn operator(&self) -> &DenseOperator {
        &self.l
    }

    pub fn nonlinearity(&self) -> &NonlinearMap {
        &self.g
    }

    pub fn u0(&self) -> &VectorH {
        &self.u0
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `L + εI`; its LU factorization is cached on first use.
    pub fn shifted_operator(&self) -> &DenseOperator {
        &self.shifted
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(
            self.l.clone(),
            self.g.clone(),
            self.u0.clone(),
            self.radius,
            epsilon,
        )
    }

    pub fn with_start(&self, u0: VectorH, radius: f64) -> Result<Self> {
        let mut p = Self::new(self.l.clone(), self.g.clone(), u0, radius, self.epsilon)?;
        // keep the factorization already computed for this shift
        p.shifted = self.shifted.clone();
        Ok(p)
    }

    fn check(&self, u: &VectorH) -> Result<()> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.dim(),
            });
        }
        Ok(())
    }

    /// `Lu + εu + g(u)`
    pub fn full_residual(&self, u: &VectorH) -> Result<VectorH> {
        self.check(u)?;
        let mut r = self.shifted.apply_unchecked(u.as_slice());
        r.axpy(1.0, &self.g.eval(u));
        Ok(r)
    }

    /// Residual of the unregularized equation, `Lu + g(u)`.
    pub fn unregularized_residual(&self, u: &VectorH) -> Result<VectorH> {
        self.check(u)?;
        let mut r = self.l.apply_unchecked(u.as_slice());
        r.axpy(1.0, &self.g.eval(u));
        Ok(r)
    }

    /// `u + (L + εI)⁻¹ g(u)`; its norm is the quantity `p` that decays
    /// exponentially along the flow.
    pub fn preconditioned_residual(&self, u: &VectorH) -> Result<VectorH> {
        self.check(u)?;
        let w = self.shifted.lu()?.solve(&self.g.eval(u));
        Ok(u + &w)
    }

    /// `I + (L + εI)⁻¹ g′(u)`, assembled column by column.
    pub fn linearized_operator(&self, u: &VectorH) -> Result<DenseOperator> {
        self.check(u)?;
        let lu = self.shifted.lu()?;
        let jac = self.g.jacobian(u);
        let n = self.dim();
        let mut data = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = jac.get(i, j);
            }
            let x = if col.iter().all(|c| *c == 0.0) {
                vec![0.0; n]
            } else {
                lu.solve_slice(&col)
            };
            for i in 0..n {
                data[i * n + j] = x[i];
            }
            data[j * n + j] += 1.0;
        }
        Ok(DenseOperator::from_parts(n, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> VectorH {
        VectorH::new(x.to_vec()).unwrap()
    }

    fn problem(l: DenseOperator, g: BuiltinG, eps: f64) -> DsmProblem {
        let n = l.dim();
        DsmProblem::new(
            l,
            NonlinearMap::builtin(g).unwrap(),
            VectorH::zeros(n),
            1.0,
            eps,
        )
        .unwrap()
    }

    #[test]
    fn full_residual_examples() {
        let p = problem(DenseOperator::identity(2), BuiltinG::Zero { dim: 2 }, 0.0);
        assert_eq!(p.full_residual(&v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));

        let g = BuiltinG::Constant { c: vec![-1.0, 0.0] };
        let p = problem(DenseOperator::diag(&[1.0, 0.0]), g.clone(), 0.0);
        assert_eq!(p.full_residual(&v(&[1.0, 0.0])).unwrap(), v(&[0.0, 0.0]));

        let p = problem(DenseOperator::diag(&[1.0, 0.0]), g, 0.5);
        let r = p.full_residual(&v(&[2.0 / 3.0, 0.0])).unwrap();
        assert!(r.norm() < 1e-15);
    }

    #[test]
    fn preconditioned_residual_examples() {
        let p = problem(
            DenseOperator::diag(&[2.0, 3.0]),
            BuiltinG::Zero { dim: 2 },
            0.0,
        );
        let u = v(&[0.3, -0.7]);
        assert_eq!(p.preconditioned_residual(&u).unwrap(), u);

        let minus_id = BuiltinG::Linear {
            b: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            c: vec![],
        };
        let p = problem(DenseOperator::identity(2), minus_id, 0.0);
        assert_eq!(
            p.preconditioned_residual(&v(&[4.0, -2.0])).unwrap().norm(),
            0.0
        );

        let p = problem(
            DenseOperator::diag(&[2.0, 2.0]),
            BuiltinG::Constant { c: vec![2.0, 4.0] },
            0.0,
        );
        assert_eq!(
            p.preconditioned_residual(&v(&[0.0, 0.0])).unwrap(),
            v(&[1.0, 2.0])
        );
    }

    #[test]
    fn preconditioned_residual_needs_invertible_shift() {
        let p = problem(
            DenseOperator::diag(&[1.0, 0.0]),
            BuiltinG::Zero { dim: 2 },
            0.0,
        );
        assert!(matches!(
            p.preconditioned_residual(&v(&[1.0, 1.0])),
            Err(Error::SingularOperator { .. })
        ));
    }

    #[test]
    fn linearized_operator_examples() {
        let p = problem(
            DenseOperator::diag(&[3.0, 5.0]),
            BuiltinG::Constant { c: vec![1.0, 1.0] },
            0.0,
        );
        assert_eq!(
            p.linearized_operator(&v(&[1.0, 2.0])).unwrap(),
            DenseOperator::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
        );

        let id = BuiltinG::Linear {
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: vec![],
        };
        let p = problem(DenseOperator::identity(2), id, 0.0);
        let a = p.linearized_operator(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(a.rows(), vec![vec![2.0, 0.0], vec![0.0, 2.0]]);

        let swap = BuiltinG::Linear {
            b: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            c: vec![],
        };
        let p = problem(DenseOperator::diag(&[1.0, 2.0]), swap, 0.0);
        let a = p.linearized_operator(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(a.rows(), vec![vec![1.0, 1.0], vec![0.5, 1.0]]);
    }

    #[test]
    fn constructor_validates() {
        let g = NonlinearMap::builtin(BuiltinG::Zero { dim: 2 }).unwrap();
        let l = DenseOperator::identity(2);
        assert!(DsmProblem::new(l.clone(), g.clone(), VectorH::zeros(3), 1.0, 0.0).is_err());
        assert!(DsmProblem::new(l.clone(), g.clone(), VectorH::zeros(2), 0.0, 0.0).is_err());
        assert!(DsmProblem::new(l, g, VectorH::zeros(2), 1.0, -1.0).is_err());
    }
}
