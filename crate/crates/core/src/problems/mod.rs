//! Seeded problem generators covering the hypothesis classes the solvers
//! rely on, tag verification, and problem files.

mod file;

pub use file::{
    load_problem, parse_problem, problem_to_json, save_problem, MatrixSource, ProblemFile,
};

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    operator_norm, smallest_singular_value, symmetric_eigen, DenseOperator, OperatorFlags, VectorH,
    PSD_REL_TOL,
};
use crate::model::{
    ball_samples, check_sector, check_trust_condition, estimate_m1, monotonicity_certificate,
    BuiltinG, Certificate, DsmProblem, NonlinearMap, Sector, DEFAULT_SECTOR_GRID,
};
use crate::oracles::nullspace_basis;

pub const DEFAULT_SEED: u64 = 42;
/// Ball samples behind the `Invertible` and `TrustCondition` tags.
pub const TAG_M1_SAMPLES: usize = 200;
pub const TAG_MONOTONE_SAMPLES: usize = 64;
const TAG_SAMPLE_SEED: u64 = 42;
const MAX_ATTEMPTS: u64 = 16;

/// Hypotheses a problem can claim. Each is checked by a certificate when a
/// problem is generated or loaded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    /// `I + (L+εI)⁻¹ g′(u)` boundedly invertible on the ball (`m₁` finite).
    Invertible,
    /// `p(0) · m₁ ≤ R`.
    TrustCondition,
    /// `L = Lᵀ ≥ 0`.
    SelfAdjointPsd,
    /// `(g(u) − g(v), u − v) ≥ 0`.
    MonotoneG,
    /// The sector around the negative real axis is free of spectrum.
    Sector,
    /// `L` has a nontrivial nullspace.
    Singular,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Sector used for `Tag::Sector` when a problem does not name one.
pub const DEFAULT_SECTOR: Sector = Sector {
    a: 0.5,
    delta: PI / 6.0,
};

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub name: String,
    pub problem: DsmProblem,
    pub tags: BTreeSet<Tag>,
    pub sector: Option<Sector>,
    /// A solution of the unregularized equation `Lv + g(v) = 0`, if known.
    pub known_solution: Option<VectorH>,
    /// The minimal-norm solution, if known.
    pub min_norm_solution: Option<VectorH>,
    /// Orthonormal basis of the nullspace of `L` (empty unless `Singular`).
    pub nullspace: Vec<VectorH>,
    /// Certificates backing the tags, in tag order.
    pub certificates: Vec<Certificate>,
}

fn mismatch(tag: Tag, detail: impl Into<String>) -> Error {
    Error::CertificateMismatch {
        tag: tag.to_string(),
        detail: detail.into(),
    }
}

/// Evaluates the certificate behind each tag and fails with
/// `CertificateMismatch` on the first tag that does not hold.
pub fn verify_tags(
    p: &DsmProblem,
    tags: &BTreeSet<Tag>,
    sector: Option<Sector>,
) -> Result<Vec<Certificate>> {
    let mut out = Vec::new();
    let mut m1 = None;
    let mut m1_for = |p: &DsmProblem| -> Result<Certificate> {
        if let Some(c) = &m1 {
            return Ok(Certificate::clone(c));
        }
        let samples = ball_samples(p.u0(), p.radius(), TAG_M1_SAMPLES, TAG_SAMPLE_SEED);
        let c = estimate_m1(p, &samples).map_err(|e| mismatch(Tag::Invertible, e.to_string()))?;
        m1 = Some(c.clone());
        Ok(c)
    };
    for &tag in tags {
        match tag {
            Tag::Invertible => out.push(m1_for(p)?),
            Tag::TrustCondition => {
                let est = m1_for(p)?.get("m1").unwrap_or(f64::INFINITY);
                let c = check_trust_condition(p, est)?;
                if !c.passed {
                    return Err(mismatch(
                        tag,
                        format!(
                            "p0 * m1 = {} exceeds R = {}",
                            c.get("p0").unwrap_or(f64::NAN) * est,
                            p.radius()
                        ),
                    ));
                }
                out.push(c);
            }
            Tag::SelfAdjointPsd => {
                let l = p.operator();
                let scale = operator_norm(l);
                let eig = symmetric_eigen(l).map_err(|e| mismatch(tag, e.to_string()))?;
                if eig.values[0] < -PSD_REL_TOL * scale {
                    return Err(mismatch(tag, format!("lambda_min = {}", eig.values[0])));
                }
            }
            Tag::MonotoneG => {
                let samples =
                    ball_samples(p.u0(), p.radius(), TAG_MONOTONE_SAMPLES, TAG_SAMPLE_SEED);
                let c = monotonicity_certificate(p.nonlinearity(), &samples)?;
                if !c.passed {
                    return Err(mismatch(tag, "g failed the monotonicity certificate"));
                }
                out.push(c);
            }
            Tag::Sector => {
                let s = sector.unwrap_or(DEFAULT_SECTOR);
                let c = check_sector(p.operator(), s.a, s.delta, DEFAULT_SECTOR_GRID)?;
                if !c.passed {
                    return Err(mismatch(
                        tag,
                        format!("spectrum meets the sector a = {}, delta = {}", s.a, s.delta),
                    ));
                }
                out.push(c);
            }
            Tag::Singular => {
                let l = p.operator();
                let sigma = smallest_singular_value(l);
                if sigma > 1e-10 * operator_norm(l).max(1.0) {
                    return Err(mismatch(tag, format!("sigma_min(L) = {sigma}")));
                }
            }
        }
    }
    Ok(out)
}

fn finish(
    name: &str,
    problem: DsmProblem,
    tags: &[Tag],
    sector: Option<Sector>,
    known_solution: Option<VectorH>,
    min_norm_solution: Option<VectorH>,
) -> Result<ProblemInstance> {
    let tags: BTreeSet<Tag> = tags.iter().copied().collect();
    let certificates = verify_tags(&problem, &tags, sector)?;
    let nullspace = if tags.contains(&Tag::Singular) {
        nullspace_basis(problem.operator())?
    } else {
        Vec::new()
    };
    Ok(ProblemInstance {
        name: name.to_string(),
        problem,
        tags,
        sector,
        known_solution,
        min_norm_solution,
        nullspace,
        certificates,
    })
}

/// Retries `build` with derived seeds until its tags verify.
fn resample(
    seed: u64,
    mut build: impl FnMut(u64) -> Result<ProblemInstance>,
) -> Result<ProblemInstance> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match build(s) {
            Ok(p) => return Ok(p),
            Err(e @ Error::CertificateMismatch { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> VectorH {
    loop {
        let x = VectorH::from_vec(gaussian(rng, n));
        let len = x.norm();
        if len > 1e-3 {
            return x.scaled(1.0 / len);
        }
    }
}

/// Columns of a Haar-like random orthogonal matrix (Gram–Schmidt, applied
/// twice, on Gaussian columns).
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<VectorH> {
    let mut cols: Vec<VectorH> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut x = VectorH::from_vec(gaussian(rng, n));
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = q
                    .as_slice()
                    .iter()
                    .zip(x.as_slice())
                    .map(|(a, b)| a * b)
                    .sum();
                x.axpy(-d, q);
            }
        }
        let len = x.norm();
        if len > 1e-6 {
            cols.push(x.scaled(1.0 / len));
        }
    }
    cols
}

/// `Σ λ_k q_k q_kᵀ`, assembled symmetric to the last bit.
fn spectral_matrix(q: &[VectorH], lambdas: &[f64]) -> DenseOperator {
    let n = q.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = q.iter().zip(lambdas).map(|(qk, l)| l * qk[i] * qk[j]).sum();
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    DenseOperator::from_row_major(n, data).expect("finite spectral matrix")
}

fn psd_flags() -> OperatorFlags {
    OperatorFlags {
        self_adjoint: true,
        psd_claimed: true,
    }
}

fn cube(x: &VectorH) -> VectorH {
    VectorH::from_vec(x.as_slice().iter().map(|v| v * v * v).collect())
}

/// Offset `c` making `v` a root of `Lv + scale·v³ + c`.
fn cubic_offset(l: &DenseOperator, scale: f64, v: &VectorH) -> Result<Vec<f64>> {
    let mut r = l.apply(v)?;
    r.axpy(scale, &cube(v));
    Ok(r.scaled(-1.0).into_vec())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    Ok(())
}

/// SPD `L` with spectrum in `[1, 4]`, `g(u)ᵢ = scale·uᵢ³ + cᵢ` with `c`
/// placing a root at a random unit-scale point `v*`, and `u₀` at distance
/// 0.5 from `v*`. The radius is grown to `R = 2·m₁·p(0)` until the trust
/// condition holds with the sampled `m₁`.
pub fn gen_wellposed_cubic(dim: usize, scale: f64, seed: u64) -> Result<ProblemInstance> {
    check_dim(dim)?;
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scale must be nonnegative, got {scale}"
        )));
    }
    resample(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let q = random_orthogonal(&mut rng, dim);
        let lambdas: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..=4.0)).collect();
        let l = spectral_matrix(&q, &lambdas).with_flags(psd_flags())?;
        let v_star = unit(&mut rng, dim);
        let c = cubic_offset(&l, scale, &v_star)?;
        let mut u0 = v_star.clone();
        u0.axpy(0.5, &unit(&mut rng, dim));

        let g = NonlinearMap::builtin(BuiltinG::Cubic { scale, c })?.with_monotone_claim(true);
        let mut p = DsmProblem::new(l, g, u0.clone(), 1.0, 0.0)?;
        let p0 = p.preconditioned_residual(&u0)?.norm();
        let mut m1 = estimate_m1(&p, &[u0.clone()])?.get("m1").unwrap();
        for _ in 0..8 {
            p = p.with_start(u0.clone(), 2.0 * m1 * p0)?;
            let samples = ball_samples(&u0, p.radius(), TAG_M1_SAMPLES, TAG_SAMPLE_SEED);
            let est = estimate_m1(&p, &samples)?.get("m1").unwrap();
            if est * p0 <= p.radius() {
                break;
            }
            m1 = est;
        }
        let tags = [
            Tag::Invertible,
            Tag::TrustCondition,
            Tag::SelfAdjointPsd,
            Tag::MonotoneG,
        ];
        finish(
            "wellposed_cubic",
            p,
            &tags,
            None,
            Some(v_star.clone()),
            Some(v_star),
        )
    })
}

/// Symmetric PSD `L = QΛQᵀ` with exactly `dim − rank` zero eigenvalues and
/// `g(u) = c + cubic_scale · Pᵀ(Pu)³`, where the rows of `P` span the range
/// of `L`. The offset places the solution set at `x* + null(L)` with `x*`
/// in the range, so `x*` is the minimal-norm solution.
///
/// With `diagonal`, `Q = I`, the nonzero eigenvalues are `1, 2, …, rank` and
/// `x*` has unit range coordinates; `dim = 2, rank = 1` gives `L = diag(1,0)`
/// and `g ≡ (−1, 0)`.
pub fn gen_singular_monotone(
    dim: usize,
    rank: usize,
    cubic_scale: f64,
    diagonal: bool,
    seed: u64,
) -> Result<ProblemInstance> {
    if !(rank >= 1 && rank < dim) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= rank < dim, got rank {rank}, dim {dim}"
        )));
    }
    if !(cubic_scale >= 0.0) || !cubic_scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cubic scale must be nonnegative, got {cubic_scale}"
        )));
    }
    resample(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (q, lambdas, y_star) = if diagonal {
            let q: Vec<VectorH> = (0..dim).map(|i| VectorH::basis(dim, i)).collect();
            let lambdas: Vec<f64> = (0..dim)
                .map(|i| if i < rank { (i + 1) as f64 } else { 0.0 })
                .collect();
            (q, lambdas, vec![1.0; rank])
        } else {
            let q = random_orthogonal(&mut rng, dim);
            let lambdas: Vec<f64> = (0..dim)
                .map(|i| {
                    if i < rank {
                        rng.random_range(1.0..=4.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let y = unit(&mut rng, rank).into_vec();
            (q, lambdas, y)
        };
        let l = spectral_matrix(&q, &lambdas).with_flags(psd_flags())?;

        let mut x_star = VectorH::zeros(dim);
        for (qk, y) in q.iter().zip(&y_star) {
            x_star.axpy(*y, qk);
        }
        // c = −Pᵀ(Λ_r y* + s y*³)
        let mut c = VectorH::zeros(dim);
        for k in 0..rank {
            let y = y_star[k];
            c.axpy(-(lambdas[k] * y + cubic_scale * y * y * y), &q[k]);
        }
        let g = if cubic_scale == 0.0 {
            BuiltinG::Constant { c: c.into_vec() }
        } else {
            BuiltinG::ProjectedCubic {
                scale: cubic_scale,
                basis: q[..rank].iter().map(|x| x.as_slice().to_vec()).collect(),
                c: c.into_vec(),
            }
        };
        let g = NonlinearMap::builtin(g)?.with_monotone_claim(true);
        let radius = 2.0 * (1.0 + x_star.norm());
        let p = DsmProblem::new(l, g, VectorH::zeros(dim), radius, 0.0)?;
        let tags = [Tag::SelfAdjointPsd, Tag::MonotoneG, Tag::Singular];
        let name = if diagonal {
            "singular_diag"
        } else {
            "singular_monotone"
        };
        finish(name, p, &tags, None, Some(x_star.clone()), Some(x_star))
    })
}

/// The `dim × dim` Hilbert matrix `1/(i + j − 1)`.
pub fn hilbert(dim: usize) -> DenseOperator {
    let data = (0..dim * dim)
        .map(|k| 1.0 / ((k / dim + k % dim + 1) as f64))
        .collect();
    DenseOperator::from_row_major(dim, data).expect("finite Hilbert matrix")
}

/// Hilbert-matrix `L` (`dim ≤ 12`) with `g(u)ᵢ = scale·uᵢ³ + cᵢ` and a
/// known root built from the eigenvectors of the largest eigenvalues, so it
/// is well resolved despite the conditioning.
pub fn gen_illconditioned(dim: usize, scale: f64, seed: u64) -> Result<ProblemInstance> {
    check_dim(dim)?;
    if dim > 12 {
        return Err(Error::InvalidParameter(format!(
            "Hilbert problems need dim <= 12, got {dim}"
        )));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scale must be nonnegative, got {scale}"
        )));
    }
    resample(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let l = hilbert(dim).with_flags(psd_flags())?;
        let eig = symmetric_eigen(&l)?;
        let top = dim.min(3);
        let mut x_star = VectorH::zeros(dim);
        for k in 0..top {
            let a: f64 = rng.sample(StandardNormal);
            x_star.axpy(a, &eig.vector(dim - 1 - k));
        }
        let len = x_star.norm();
        let x_star = x_star.scaled(1.0 / len.max(1e-3));
        let c = cubic_offset(&l, scale, &x_star)?;
        let g = NonlinearMap::builtin(BuiltinG::Cubic { scale, c })?.with_monotone_claim(true);
        let radius = 2.0 * (1.0 + x_star.norm());
        let p = DsmProblem::new(l, g, VectorH::zeros(dim), radius, 0.0)?;
        finish(
            "illconditioned",
            p,
            &[Tag::SelfAdjointPsd, Tag::MonotoneG],
            None,
            Some(x_star.clone()),
            Some(x_star),
        )
    })
}

/// Block-diagonal `L` with 2×2 blocks `[[α, ω], [−ω, α]]`, `α ∈ [0, 1]`,
/// `ω ∈ [0.5, 2]`: eigenvalues `α ± iω` stay clear of the sector around the
/// negative real axis. `g(u)ᵢ = 0.1·uᵢ³ + cᵢ` with random `c`, `ε = 0.1`.
pub fn gen_sector_nonsymmetric(dim: usize, seed: u64) -> Result<ProblemInstance> {
    check_dim(dim)?;
    if dim % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "sector problems need an even dim, got {dim}"
        )));
    }
    resample(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut data = vec![0.0; dim * dim];
        for b in 0..dim / 2 {
            let alpha = rng.random_range(0.0..=1.0);
            let omega = rng.random_range(0.5..=2.0);
            let (i, j) = (2 * b, 2 * b + 1);
            data[i * dim + i] = alpha;
            data[j * dim + j] = alpha;
            data[i * dim + j] = omega;
            data[j * dim + i] = -omega;
        }
        let l = DenseOperator::from_row_major(dim, data)?;
        let c = unit(&mut rng, dim).scaled(0.5).into_vec();
        let g = NonlinearMap::builtin(BuiltinG::Cubic { scale: 0.1, c })?.with_monotone_claim(true);
        let p = DsmProblem::new(l, g, VectorH::zeros(dim), 4.0, 0.1)?;
        finish(
            "sector_nonsymmetric",
            p,
            &[Tag::Sector],
            Some(DEFAULT_SECTOR),
            None,
            None,
        )
    })
}

/// Linear equation `Lv = f_δ` with SPD `L` (spectrum in `[1, 4]`) and data
/// `f_δ = L v* + δ ξ`, `‖ξ‖ = 1`. The known solution is the noise-free
/// `v*`; `g ≡ −f_δ`.
pub fn gen_noisy_linear(dim: usize, delta: f64, seed: u64) -> Result<ProblemInstance> {
    check_dim(dim)?;
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    resample(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let q = random_orthogonal(&mut rng, dim);
        let lambdas: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..=4.0)).collect();
        let l = spectral_matrix(&q, &lambdas).with_flags(psd_flags())?;
        let v_star = unit(&mut rng, dim);
        let mut f = l.apply(&v_star)?;
        f.axpy(delta, &unit(&mut rng, dim));
        let g = NonlinearMap::builtin(BuiltinG::Constant {
            c: f.scaled(-1.0).into_vec(),
        })?
        .with_monotone_claim(true);
        let p = DsmProblem::new(l, g, VectorH::zeros(dim), 4.0, 0.0)?;
        let tags = [Tag::Invertible, Tag::SelfAdjointPsd, Tag::MonotoneG];
        finish("noisy_linear", p, &tags, None, Some(v_star), None)
    })
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 6] = [
    "wellposed_cubic",
    "singular_monotone",
    "singular_diag",
    "illconditioned",
    "sector_nonsymmetric",
    "noisy_linear",
];

/// Generator parameters; unset fields take per-generator defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub dim: Option<usize>,
    pub rank: Option<usize>,
    pub scale: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
}

/// Builds a named built-in problem.
pub fn builtin(name: &str, params: &GenParams) -> Result<ProblemInstance> {
    let seed = params.seed.unwrap_or(DEFAULT_SEED);
    match name {
        "wellposed_cubic" => {
            gen_wellposed_cubic(params.dim.unwrap_or(10), params.scale.unwrap_or(0.1), seed)
        }
        "singular_monotone" => gen_singular_monotone(
            params.dim.unwrap_or(5),
            params.rank.unwrap_or(3),
            params.scale.unwrap_or(0.0),
            false,
            seed,
        ),
        "singular_diag" => gen_singular_monotone(
            params.dim.unwrap_or(2),
            params.rank.unwrap_or(1),
            params.scale.unwrap_or(0.0),
            true,
            seed,
        ),
        "illconditioned" => {
            gen_illconditioned(params.dim.unwrap_or(6), params.scale.unwrap_or(0.1), seed)
        }
        "sector_nonsymmetric" => gen_sector_nonsymmetric(params.dim.unwrap_or(6), seed),
        "noisy_linear" => {
            gen_noisy_linear(params.dim.unwrap_or(10), params.delta.unwrap_or(1e-3), seed)
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown built-in problem `{other}`; known: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}
