//! Independent verifiers for the flow solvers: a damped Newton root finder,
//! the spectral minimal-norm solver for linear equations, and sampled probes
//! of the solution set `N_F = {v : Lv + g(v) = 0}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    inner, smallest_singular_value, solve_linear, symmetric_eigen, DenseOperator, VectorH,
};
use crate::model::DsmProblem;

pub const NEWTON_MAX_ITERATIONS: usize = 200;
/// Eigenvalues with `|λ| ≤ PINV_CUTOFF · max|λ|` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;
pub const PROBE_SAMPLES: usize = 200;
pub const PROBE_RADII: [f64; 3] = [1e-3, 1e-2, 1e-1];

const ARMIJO_C: f64 = 1e-4;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMethod {
    DampedNewton,
    Pseudoinverse,
    MembershipProbe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub solution: VectorH,
    pub residual: f64,
    pub iterations: usize,
    pub method: OracleMethod,
}

/// Armijo-damped Newton iteration for `u + (L+εI)⁻¹ g(u) = 0`.
///
/// The Newton direction solves `(L + εI + g′(u)) d = −(Lu + εu + g(u))`,
/// which is the same step as for the preconditioned residual but assembled
/// without the flow's linearized operator. Iterates until the preconditioned
/// residual is at most `tol`.
pub fn newton_oracle(p: &DsmProblem, u0: &VectorH, tol: f64) -> Result<OracleReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let merit = |u: &VectorH| -> Result<f64> { Ok(p.preconditioned_residual(u)?.norm()) };
    let mut u = u0.clone();
    let mut m = merit(&u)?;
    let n = p.dim();
    for it in 0..=NEWTON_MAX_ITERATIONS {
        if m <= tol {
            return Ok(OracleReport {
                solution: u,
                residual: m,
                iterations: it,
                method: OracleMethod::DampedNewton,
            });
        }
        if it == NEWTON_MAX_ITERATIONS {
            break;
        }
        let jac = p.nonlinearity().jacobian(&u);
        let shifted = p.shifted_operator();
        let data: Vec<f64> = (0..n * n)
            .map(|k| shifted.as_row_major()[k] + jac.as_row_major()[k])
            .collect();
        let a = DenseOperator::from_row_major(n, data)?;
        let rhs = p.full_residual(&u)?.scaled(-1.0);
        let d = solve_linear(&a, &rhs).map_err(|_| Error::SingularLinearization {
            sigma_min: smallest_singular_value(&a),
        })?;

        let mut lambda = 1.0;
        loop {
            let mut trial = u.clone();
            trial.axpy(lambda, &d);
            let mt = merit(&trial)?;
            if mt <= (1.0 - ARMIJO_C * lambda) * m || lambda <= MIN_DAMPING {
                u = trial;
                m = mt;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::MaxIterations(NEWTON_MAX_ITERATIONS))
}

fn spectral_parts(l: &DenseOperator) -> Result<(Vec<f64>, Vec<VectorH>, f64)> {
    let eig = symmetric_eigen(l)?;
    let scale = eig.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let vectors = (0..l.dim()).map(|k| eig.vector(k)).collect();
    Ok((eig.values, vectors, PINV_CUTOFF * scale))
}

/// Minimal-norm solution `L⁺b` of `Lx = b` for symmetric `L`.
///
/// Fails with `Inconsistent` when `b` is not in the range of `L`, i.e. when
/// `‖L L⁺b − b‖ > 1e-8 ‖b‖`.
pub fn pseudoinverse_min_norm(l: &DenseOperator, b: &VectorH) -> Result<VectorH> {
    if b.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            got: b.dim(),
        });
    }
    let (values, vectors, cutoff) = spectral_parts(l)?;
    let mut x = VectorH::zeros(l.dim());
    for (lam, q) in values.iter().zip(&vectors) {
        if lam.abs() > cutoff {
            x.axpy(inner(q, b)? / lam, q);
        }
    }
    let residual = (&l.apply(&x)? - b).norm();
    if residual > 1e-8 * b.norm() {
        return Err(Error::Inconsistent(residual));
    }
    Ok(x)
}

/// Orthonormal basis of the numerical nullspace of a symmetric operator,
/// with the same cutoff as [`pseudoinverse_min_norm`].
pub fn nullspace_basis(l: &DenseOperator) -> Result<Vec<VectorH>> {
    let (values, vectors, cutoff) = spectral_parts(l)?;
    Ok(values
        .iter()
        .zip(vectors)
        .filter(|(lam, _)| lam.abs() <= cutoff)
        .map(|(_, q)| q)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub member: bool,
    /// Smallest `(F(z), z − w)` over the samples.
    pub margin: f64,
    pub samples: usize,
    /// Sample achieving the margin.
    pub worst_sample: Option<usize>,
}

/// Tests `(F(z), z − w) ≥ 0` on the given samples, with `F(z) = Lz + g(z)`
/// and a tolerance of `1e-9 (1 + ‖z‖)(1 + ‖F(z)‖)`. For monotone `F` this
/// holds at every `z` exactly when `w` solves `F(w) = 0`; finite sampling
/// can only refute membership, never prove it.
pub fn membership_probe(
    p: &DsmProblem,
    w: &VectorH,
    z_samples: &[VectorH],
) -> Result<MembershipReport> {
    let mut report = MembershipReport {
        member: true,
        margin: f64::INFINITY,
        samples: z_samples.len(),
        worst_sample: None,
    };
    for (k, z) in z_samples.iter().enumerate() {
        let fz = p.unregularized_residual(z)?;
        let value = inner(&fz, &(z - w))?;
        if value < report.margin {
            report.margin = value;
            report.worst_sample = Some(k);
        }
        if value < -1e-9 * (1.0 + z.norm()) * (1.0 + fz.norm()) {
            report.member = false;
        }
    }
    Ok(report)
}

/// `count` points `w + r·ξ/‖ξ‖` with Gaussian `ξ`, cycling the radius `r`
/// through [`PROBE_RADII`] scaled by `1 + ‖w‖`.
pub fn probe_samples(w: &VectorH, count: usize, seed: u64) -> Vec<VectorH> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + w.norm();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let xi: Vec<f64> = (0..w.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let len = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        let r = PROBE_RADII[out.len() % PROBE_RADII.len()] * scale;
        let z: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(&xi)
            .map(|(a, x)| a + r * x / len)
            .collect();
        out.push(VectorH::from_vec(z));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub trials: usize,
    pub convex_passed: usize,
    pub closed_passed: usize,
    pub nullity: usize,
    pub worst_residual: f64,
}

impl ConvexityReport {
    pub fn all_passed(&self) -> bool {
        self.convex_passed == self.trials && self.closed_passed == self.trials
    }
}

const MEMBER_TOL: f64 = 1e-9;
const COMBINATION_WEIGHTS: [f64; 3] = [0.25, 0.5, 0.75];

/// Checks convexity and closedness of `{x : Lx = b}` by sampling.
///
/// Members are parametrized as `L⁺b + N α` with `N` a nullspace basis. Each
/// trial draws two members and checks the combinations at weights 0.25,
/// 0.5, 0.75, then follows a convergent sequence of members and checks its
/// limit. Membership means `‖Lx − b‖ ≤ 1e-9`.
pub fn convexity_closedness_suite(
    l: &DenseOperator,
    b: &VectorH,
    trials: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    let x_min = pseudoinverse_min_norm(l, b)?;
    let basis = nullspace_basis(l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |spread: f64| -> VectorH {
        let mut x = x_min.clone();
        for q in &basis {
            let a: f64 = rng.sample(StandardNormal);
            x.axpy(spread * a, q);
        }
        x
    };
    let residual = |x: &VectorH| -> Result<f64> { Ok((&l.apply(x)? - b).norm()) };

    let mut report = ConvexityReport {
        trials,
        convex_passed: 0,
        closed_passed: 0,
        nullity: basis.len(),
        worst_residual: 0.0,
    };
    for _ in 0..trials {
        let v = draw(5.0);
        let w = draw(5.0);
        let mut worst = residual(&v)?.max(residual(&w)?);
        for s in COMBINATION_WEIGHTS {
            let mut z = v.scaled(s);
            z.axpy(1.0 - s, &w);
            worst = worst.max(residual(&z)?);
        }
        report.worst_residual = report.worst_residual.max(worst);
        if worst <= MEMBER_TOL {
            report.convex_passed += 1;
        }

        // z_k = (z_{k−1} + v)/2 stays in the set and converges to v
        let mut z = w.clone();
        let mut worst = 0.0f64;
        for _ in 0..40 {
            z = (&z + &v).scaled(0.5);
            worst = worst.max(residual(&z)?);
        }
        let gap = z.distance(&v);
        worst = worst.max(residual(&z)?);
        report.worst_residual = report.worst_residual.max(worst);
        if worst <= MEMBER_TOL && gap <= 1e-9 * (1.0 + v.norm()) {
            report.closed_passed += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BuiltinG, NonlinearMap};

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
    fn newton_examples() {
        let p = problem(
            DenseOperator::diag(&[2.0, 2.0]),
            BuiltinG::Constant { c: vec![2.0, 4.0] },
            0.0,
        );
        let r = newton_oracle(&p, &v(&[-1.0, -2.0]), 1e-12).unwrap();
        assert_eq!(r.iterations, 0);
        let r = newton_oracle(&p, &v(&[0.0, 0.0]), 1e-12).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.solution.distance(&v(&[-1.0, -2.0])) < 1e-14);
        assert_eq!(r.method, OracleMethod::DampedNewton);
    }

    #[test]
    fn newton_scalar_cubic() {
        // 2v + v³ + 3 = 0 has the root v = −1
        let p = problem(
            DenseOperator::diag(&[2.0]),
            BuiltinG::Cubic {
                scale: 1.0,
                c: vec![3.0],
            },
            0.0,
        );
        let r = newton_oracle(&p, &v(&[4.0]), 1e-13).unwrap();
        assert!((r.solution[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pseudoinverse_examples() {
        let x = pseudoinverse_min_norm(&DenseOperator::diag(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(x, v(&[1.0, 0.0]));

        let b = v(&[0.3, -1.2, 2.0]);
        let x = pseudoinverse_min_norm(&DenseOperator::identity(3), &b).unwrap();
        assert!(x.distance(&b) < 1e-15);

        let h = 0.5f64.sqrt();
        let l = DenseOperator::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let x = pseudoinverse_min_norm(&l, &v(&[h, h])).unwrap();
        assert!(x.distance(&v(&[h, h])) < 1e-14);
        let null = nullspace_basis(&l).unwrap();
        assert_eq!(null.len(), 1);
        assert!(inner(&x, &null[0]).unwrap().abs() < 1e-14);

        assert!(matches!(
            pseudoinverse_min_norm(&DenseOperator::diag(&[1.0, 0.0]), &v(&[1.0, 1.0])),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn membership_examples() {
        let p = problem(DenseOperator::identity(2), BuiltinG::Zero { dim: 2 }, 0.0);
        let r = membership_probe(&p, &v(&[1.0, 0.0]), &[v(&[0.5, 0.0])]).unwrap();
        assert!(!r.member);
        assert_eq!(r.margin, -0.25);

        let sol = v(&[0.0, 0.0]);
        let r = membership_probe(&p, &sol, &probe_samples(&sol, 200, 1)).unwrap();
        assert!(r.member);

        // solution line {(1, t)} of diag(1,0) with g ≡ (−1, 0)
        let p = problem(
            DenseOperator::diag(&[1.0, 0.0]),
            BuiltinG::Constant { c: vec![-1.0, 0.0] },
            0.0,
        );
        let mid = (&v(&[1.0, -3.0]) + &v(&[1.0, 7.0])).scaled(0.5);
        assert_eq!(mid, v(&[1.0, 2.0]));
        let r = membership_probe(&p, &mid, &probe_samples(&mid, 200, 2)).unwrap();
        assert!(r.member);
        let off = v(&[1.2, 2.0]);
        assert!(
            !membership_probe(&p, &off, &probe_samples(&off, 200, 3))
                .unwrap()
                .member
        );
    }

    #[test]
    fn probe_samples_cycle_radii() {
        let w = v(&[3.0, 4.0]);
        let s = probe_samples(&w, 6, 9);
        for (k, z) in s.iter().enumerate() {
            let r = PROBE_RADII[k % 3] * 6.0;
            assert!((z.distance(&w) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn convexity_examples() {
        let r =
            convexity_closedness_suite(&DenseOperator::diag(&[2.0, 3.0]), &v(&[1.0, 1.0]), 10, 0)
                .unwrap();
        assert_eq!(r.nullity, 0);
        assert!(r.all_passed());

        let r =
            convexity_closedness_suite(&DenseOperator::diag(&[1.0, 0.0]), &v(&[1.0, 0.0]), 50, 1)
                .unwrap();
        assert_eq!(r.nullity, 1);
        assert!(r.all_passed());
    }
}
