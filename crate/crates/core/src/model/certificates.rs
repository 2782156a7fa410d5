//! Numerical certificates for the hypotheses of the two solvers.
//!
//! Suprema over the locality ball cannot be computed exactly; the bounds
//! here are sampled maxima and therefore lower bounds of the true suprema.
//! Every certificate records the quantities its verdict was based on.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DsmProblem, NonlinearMap};
use crate::error::{Error, Result};
use crate::linalg::{
    inner, operator_norm, singular_values, smallest_singular_value, symmetric_eigen, DenseOperator,
    VectorH, PSD_REL_TOL, SYMMETRY_REL_TOL,
};

/// Below this smallest singular value a linearization counts as singular.
pub const SINGULAR_LINEARIZATION_TOL: f64 = 1e-12;
/// Central-difference step for [`fd_jacobian_check`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Requested number of sector grid points for non-self-adjoint operators.
pub const DEFAULT_SECTOR_GRID: usize = 64;

const SECTOR_ANGLES: usize = 9;
const MONOTONE_TOL: f64 = 1e-10;
const RESOLVENT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CertificateKind {
    TrustCondition,
    ResolventBound,
    Sector,
    Monotone,
    Invertible,
}

/// Outcome of a hypothesis check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub passed: bool,
    pub quantities: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Certificate {
    pub(crate) fn new(kind: CertificateKind) -> Self {
        Certificate {
            kind,
            passed: false,
            quantities: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub(crate) fn set(&mut self, key: impl Into<String>, value: f64) {
        self.quantities.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.quantities.get(key).copied()
    }
}

/// Sector `{z : 0 < |z| ≤ a, |arg z − π| ≤ δ}` around the negative real axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub a: f64,
    pub delta: f64,
}

/// `count` points drawn uniformly from the ball `B(center, radius)`. The
/// first point is the center; a longer draw with the same seed extends a
/// shorter one.
pub fn ball_samples(center: &VectorH, radius: f64, count: usize, seed: u64) -> Vec<VectorH> {
    let n = center.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(center.clone());
    while out.len() < count {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        if len == 0.0 {
            continue;
        }
        let coords = center
            .as_slice()
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + r * d / len)
            .collect();
        out.push(VectorH::from_vec(coords));
    }
    out
}

/// Sampled estimate of `sup ‖[I + (L+εI)⁻¹ g′(u)]⁻¹‖` over the ball.
///
/// The estimate is the maximum of `1/σ_min` over `samples`, hence a lower
/// bound of the supremum. Fails with `SingularLinearization` if some sample
/// has `σ_min` below [`SINGULAR_LINEARIZATION_TOL`].
pub fn estimate_m1(p: &DsmProblem, samples: &[VectorH]) -> Result<Certificate> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "estimate_m1 needs at least one sample".into(),
        ));
    }
    let mut worst_sigma = f64::INFINITY;
    for u in samples {
        let dist = u.distance(p.u0());
        if dist > p.radius() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "sample at distance {dist} lies outside the ball of radius {}",
                p.radius()
            )));
        }
        let sigma = smallest_singular_value(&p.linearized_operator(u)?);
        if sigma < SINGULAR_LINEARIZATION_TOL {
            return Err(Error::SingularLinearization { sigma_min: sigma });
        }
        worst_sigma = worst_sigma.min(sigma);
    }
    let mut cert = Certificate::new(CertificateKind::Invertible);
    cert.passed = true;
    cert.set("m1", 1.0 / worst_sigma);
    cert.set("sigma_min", worst_sigma);
    cert.set("samples", samples.len() as f64);
    cert.set("radius", p.radius());
    cert.set("epsilon", p.epsilon());
    cert.notes.push(format!(
        "sampled maximum over {} points of the ball; a lower bound of the supremum",
        samples.len()
    ));
    Ok(cert)
}

/// Trust condition `‖u₀ + (L+εI)⁻¹ g(u₀)‖ · m₁ ≤ R`.
pub fn check_trust_condition(p: &DsmProblem, m1: f64) -> Result<Certificate> {
    if !(m1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "m1 must be positive, got {m1}"
        )));
    }
    let p0 = p.preconditioned_residual(p.u0())?.norm();
    let mut cert = Certificate::new(CertificateKind::TrustCondition);
    cert.passed = p0 * m1 <= p.radius();
    cert.set("p0", p0);
    cert.set("m1", m1);
    cert.set("R", p.radius());
    cert.set("margin", p.radius() - p0 * m1);
    Ok(cert)
}

fn self_adjoint_psd(l: &DenseOperator) -> Result<Option<f64>> {
    let scale = operator_norm(l);
    if l.max_asymmetry() > SYMMETRY_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Ok(None);
    }
    let lambda_min = symmetric_eigen(l)?.values[0];
    Ok((lambda_min >= -PSD_REL_TOL * scale).then_some(lambda_min))
}

/// Resolvent bound `‖(L+εI)⁻¹‖ ≤ 1/(ε sin δ)` on a grid of shifts.
///
/// Self-adjoint PSD operators use `sin δ = 1`. Otherwise a sector must be
/// supplied and is verified first with [`check_sector`].
pub fn check_resolvent_bound(
    p: &DsmProblem,
    eps_grid: &[f64],
    sector: Option<Sector>,
) -> Result<Certificate> {
    let l = p.operator();
    let mut cert = Certificate::new(CertificateKind::ResolventBound);
    let sin_delta = if let Some(lambda_min) = self_adjoint_psd(l)? {
        cert.set("lambda_min", lambda_min);
        cert.notes
            .push("self-adjoint PSD operator, sin(delta) = 1".into());
        1.0
    } else if let Some(s) = sector {
        let sc = check_sector(l, s.a, s.delta, DEFAULT_SECTOR_GRID)?;
        if !sc.passed {
            return Err(Error::NotApplicable(
                "the supplied sector contains spectrum of L".into(),
            ));
        }
        cert.notes
            .push(format!("sector a = {}, delta = {} verified", s.a, s.delta));
        s.delta.sin()
    } else {
        return Err(Error::NotApplicable(
            "L is not self-adjoint PSD and no sector was supplied".into(),
        ));
    };

    cert.passed = true;
    let mut worst = f64::INFINITY;
    for (k, &eps) in eps_grid.iter().enumerate() {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shift must be positive, got {eps}"
            )));
        }
        let sigma = smallest_singular_value(&l.shifted(eps));
        let resolvent = if sigma == 0.0 {
            f64::INFINITY
        } else {
            1.0 / sigma
        };
        let bound = 1.0 / (eps * sin_delta);
        let ok = resolvent <= bound + RESOLVENT_SLACK;
        cert.passed &= ok;
        worst = worst.min(bound - resolvent);
        cert.set(format!("eps[{k}]"), eps);
        cert.set(format!("resolvent_norm[{k}]"), resolvent);
        cert.set(format!("bound[{k}]"), bound);
    }
    cert.set("sin_delta", sin_delta);
    cert.set("min_margin", worst);
    Ok(cert)
}

/// Checks that the sector `{0 < |z| ≤ a, |arg z − π| ≤ δ}` consists of
/// regular points of `L`.
///
/// For self-adjoint `L` the sector meets the spectrum only on `[−a, 0)`, so
/// the eigenvalues are inspected directly. Otherwise `σ_min(L − zI)` is
/// evaluated (through the real 2n×2n embedding) on a grid of 9 angles and
/// `ceil(grid_size / 9)` log-spaced moduli in `[10⁻³a, a]`.
pub fn check_sector(
    l: &DenseOperator,
    a: f64,
    delta: f64,
    grid_size: usize,
) -> Result<Certificate> {
    if !(a > 0.0) || !(delta > 0.0 && delta < PI / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "sector needs a > 0 and 0 < delta < pi/2, got a = {a}, delta = {delta}"
        )));
    }
    let mut cert = Certificate::new(CertificateKind::Sector);
    cert.set("a", a);
    cert.set("delta", delta);
    let scale = operator_norm(l);

    if l.max_asymmetry() <= SYMMETRY_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        let eig = symmetric_eigen(l)?;
        let mut margin = f64::INFINITY;
        let mut inside = 0usize;
        for &lam in &eig.values {
            if (-a..0.0).contains(&lam) {
                inside += 1;
                margin = 0.0;
            } else {
                let d = if lam >= 0.0 { lam } else { -a - lam };
                margin = margin.min(d);
            }
        }
        cert.passed = inside == 0;
        cert.set("eigenvalues_in_sector", inside as f64);
        cert.set("margin", margin);
        cert.notes
            .push("self-adjoint: sector reduces to the interval [-a, 0)".into());
        return Ok(cert);
    }

    let n = l.dim();
    let moduli = grid_size.max(1).div_ceil(SECTOR_ANGLES);
    let threshold = 1e-12 * scale.max(1.0);
    let mut margin = f64::INFINITY;
    for i in 0..moduli {
        let r = if moduli == 1 {
            a
        } else {
            a * 10f64.powf(-3.0 * (1.0 - i as f64 / (moduli - 1) as f64))
        };
        for k in 0..SECTOR_ANGLES {
            let theta = PI - delta + 2.0 * delta * k as f64 / (SECTOR_ANGLES - 1) as f64;
            let (x, y) = (r * theta.cos(), r * theta.sin());
            // [[L - xI, yI], [-yI, L - xI]] represents L - zI for z = x + iy
            let m = 2 * n;
            let mut data = vec![0.0; m * m];
            for row in 0..n {
                for col in 0..n {
                    let v = l.get(row, col) - if row == col { x } else { 0.0 };
                    data[row * m + col] = v;
                    data[(row + n) * m + col + n] = v;
                }
                data[row * m + row + n] = y;
                data[(row + n) * m + row] = -y;
            }
            let emb = DenseOperator::from_parts(m, data);
            let s = *singular_values(&emb).last().unwrap();
            margin = margin.min(s);
        }
    }
    cert.passed = margin > threshold;
    cert.set("grid_points", (moduli * SECTOR_ANGLES) as f64);
    cert.set("margin", margin);
    cert.notes.push(format!(
        "{moduli} log-spaced moduli in [1e-3 a, a] x {SECTOR_ANGLES} angles"
    ));
    Ok(cert)
}

/// Largest column-wise discrepancy between central differences of `g` and
/// its analytic Jacobian at `u`, relative to the column norm with a floor
/// of one.
pub fn fd_jacobian_check(g: &NonlinearMap, u: &VectorH, h: f64) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {h} outside [1e-8, 1e-4]"
        )));
    }
    if u.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: u.dim(),
        });
    }
    let jac = g.jacobian(u);
    let n = u.dim();
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut plus = u.clone();
        plus.as_mut_slice()[j] += h;
        let mut minus = u.clone();
        minus.as_mut_slice()[j] -= h;
        let fd = (&g.eval(&plus) - &g.eval(&minus)).scaled(0.5 / h);
        let col = jac.column(j);
        let err = fd.distance(&col) / col.norm().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Certifies monotonicity of `g` on the samples: the symmetric part of
/// `g′(u)` must be PSD at every sample, and the secant form
/// `(g(u) − g(v), u − v)` nonnegative on sample pairs.
pub fn monotonicity_certificate(g: &NonlinearMap, samples: &[VectorH]) -> Result<Certificate> {
    let mut cert = Certificate::new(CertificateKind::Monotone);
    let mut worst_eig = f64::INFINITY;
    for u in samples {
        if !u.is_finite() {
            return Err(Error::NonFinite("monotonicity sample"));
        }
        let jac = g.jacobian(u);
        let lam = symmetric_eigen(&jac.symmetric_part())?.values[0];
        let tol = MONOTONE_TOL * jac.frobenius_norm().max(1.0);
        worst_eig = worst_eig.min(lam / (tol / MONOTONE_TOL));
    }

    let values: Vec<VectorH> = samples.iter().map(|u| g.eval(u)).collect();
    let m = samples.len();
    let pairs: Vec<(usize, usize)> = if m <= 40 {
        (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .collect()
    } else {
        (0..m - 1)
            .map(|i| (i, i + 1))
            .chain((0..m / 2).map(|i| (i, m - 1 - i)))
            .collect()
    };
    let mut worst_secant = f64::INFINITY;
    for &(i, j) in &pairs {
        let dg = &values[i] - &values[j];
        let du = &samples[i] - &samples[j];
        let scale = (dg.norm() * du.norm()).max(1.0);
        worst_secant = worst_secant.min(inner(&dg, &du)? / scale);
    }

    cert.passed = worst_eig >= -MONOTONE_TOL && worst_secant >= -MONOTONE_TOL;
    cert.set("min_sym_eigenvalue_scaled", worst_eig);
    cert.set(
        "min_secant_scaled",
        if pairs.is_empty() { 0.0 } else { worst_secant },
    );
    cert.set("samples", m as f64);
    cert.set("pairs", pairs.len() as f64);
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinG;

    fn v(x: &[f64]) -> VectorH {
        VectorH::new(x.to_vec()).unwrap()
    }

    fn map(g: BuiltinG) -> NonlinearMap {
        NonlinearMap::builtin(g).unwrap()
    }

    fn problem(l: DenseOperator, g: BuiltinG, u0: VectorH, radius: f64, eps: f64) -> DsmProblem {
        DsmProblem::new(l, map(g), u0, radius, eps).unwrap()
    }

    #[test]
    fn ball_samples_stay_inside_and_extend() {
        let c = v(&[1.0, -2.0, 0.5]);
        let s = ball_samples(&c, 0.3, 200, 7);
        assert_eq!(s[0], c);
        assert!(s.iter().all(|u| u.distance(&c) <= 0.3));
        let longer = ball_samples(&c, 0.3, 300, 7);
        assert_eq!(&longer[..200], &s[..]);
    }

    #[test]
    fn m1_examples() {
        let p = problem(
            DenseOperator::diag(&[2.0, 5.0]),
            BuiltinG::Constant { c: vec![1.0, 2.0] },
            VectorH::zeros(2),
            1.0,
            0.0,
        );
        let cert = estimate_m1(&p, &ball_samples(p.u0(), 1.0, 20, 1)).unwrap();
        assert!((cert.get("m1").unwrap() - 1.0).abs() < 1e-12);

        let id = BuiltinG::Linear {
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: vec![],
        };
        let p = problem(DenseOperator::identity(2), id, VectorH::zeros(2), 1.0, 0.0);
        let cert = estimate_m1(&p, &ball_samples(p.u0(), 1.0, 5, 1)).unwrap();
        assert!((cert.get("m1").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn m1_rejects_outside_samples_and_singularity() {
        let minus_id = BuiltinG::Linear {
            b: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            c: vec![],
        };
        let p = problem(
            DenseOperator::identity(2),
            minus_id,
            VectorH::zeros(2),
            1.0,
            0.0,
        );
        assert!(matches!(
            estimate_m1(&p, &[VectorH::zeros(2)]),
            Err(Error::SingularLinearization { .. })
        ));
        assert!(matches!(
            estimate_m1(&p, &[v(&[2.0, 0.0])]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn trust_condition_examples() {
        let p = problem(
            DenseOperator::identity(2),
            BuiltinG::Zero { dim: 2 },
            VectorH::zeros(2),
            1e-3,
            0.0,
        );
        let c = check_trust_condition(&p, 5.0).unwrap();
        assert!(c.passed && c.get("p0") == Some(0.0));

        let p = problem(
            DenseOperator::identity(2),
            BuiltinG::Zero { dim: 2 },
            v(&[1.0, 0.0]),
            0.5,
            0.0,
        );
        let c = check_trust_condition(&p, 1.0).unwrap();
        assert!(!c.passed);
        assert_eq!(c.get("p0"), Some(1.0));
        assert_eq!(c.get("margin"), Some(-0.5));
    }

    #[test]
    fn resolvent_examples() {
        let p = problem(
            DenseOperator::diag(&[0.0, 1.0]),
            BuiltinG::Zero { dim: 2 },
            VectorH::zeros(2),
            1.0,
            0.0,
        );
        let c = check_resolvent_bound(&p, &[0.5], None).unwrap();
        assert!(c.passed);
        assert!((c.get("resolvent_norm[0]").unwrap() - 2.0).abs() < 1e-12);

        let p = problem(
            DenseOperator::identity(2),
            BuiltinG::Zero { dim: 2 },
            VectorH::zeros(2),
            1.0,
            0.0,
        );
        let c = check_resolvent_bound(&p, &[1.0], None).unwrap();
        assert!(c.passed && (c.get("resolvent_norm[0]").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn resolvent_not_applicable_without_sector() {
        let rot = DenseOperator::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let p = problem(rot, BuiltinG::Zero { dim: 2 }, VectorH::zeros(2), 1.0, 0.0);
        assert!(matches!(
            check_resolvent_bound(&p, &[0.1], None),
            Err(Error::NotApplicable(_))
        ));
        let c = check_resolvent_bound(
            &p,
            &[0.1, 0.01],
            Some(Sector {
                a: 0.5,
                delta: PI / 6.0,
            }),
        )
        .unwrap();
        assert!(c.passed);
    }

    #[test]
    fn sector_examples() {
        assert!(
            check_sector(&DenseOperator::identity(3), 0.5, 0.3, 64)
                .unwrap()
                .passed
        );
        assert!(
            !check_sector(&DenseOperator::diag(&[-0.1, 1.0]), 0.5, 0.3, 64)
                .unwrap()
                .passed
        );
        let rot = DenseOperator::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let c = check_sector(&rot, 0.5, PI / 6.0, 64).unwrap();
        assert!(c.passed);
        // closest sector point to ±i is at modulus a on the edge of the sector
        assert!(c.get("margin").unwrap() > 0.8);
        // a nonsymmetric operator with a real negative eigenvalue inside the sector
        let bad = DenseOperator::from_rows(&[vec![-0.2, 1.0], vec![0.0, 2.0]]).unwrap();
        let c = check_sector(&bad, 0.5, PI / 6.0, 64).unwrap();
        assert!(c.get("margin").unwrap() < 0.2);
    }

    #[test]
    fn fd_check_examples() {
        let lin = map(BuiltinG::Linear {
            b: vec![vec![1.0, 2.0], vec![-3.0, 4.0]],
            c: vec![0.5, 0.5],
        });
        assert!(fd_jacobian_check(&lin, &v(&[0.3, -1.2]), 1e-5).unwrap() <= 1e-9);

        let cubic = map(BuiltinG::Cubic {
            scale: 1.0,
            c: vec![0.0, 0.0],
        });
        assert!(fd_jacobian_check(&cubic, &v(&[1.0, 1.0]), 1e-5).unwrap() <= 1e-6);

        let constant = map(BuiltinG::Constant { c: vec![1.0, -4.0] });
        assert!(fd_jacobian_check(&constant, &v(&[1.0, 1.0]), 1e-5).unwrap() <= 1e-12);

        assert!(fd_jacobian_check(&constant, &v(&[1.0, 1.0]), 1e-2).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        let samples = ball_samples(&VectorH::zeros(2), 2.0, 30, 3);
        let cubic = map(BuiltinG::Cubic {
            scale: 1.0,
            c: vec![0.0, 0.0],
        });
        assert!(monotonicity_certificate(&cubic, &samples).unwrap().passed);

        let minus = map(BuiltinG::Linear {
            b: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            c: vec![],
        });
        assert!(!monotonicity_certificate(&minus, &samples).unwrap().passed);

        let shear = map(BuiltinG::Linear {
            b: vec![vec![1.0, 2.0], vec![0.0, 1.0]],
            c: vec![],
        });
        let c = monotonicity_certificate(&shear, &samples).unwrap();
        assert!(c.passed);
        // symmetric part [[1,1],[1,1]] has eigenvalues 0 and 2
        assert!(c.get("min_sym_eigenvalue_scaled").unwrap().abs() < 1e-12);
    }
}
