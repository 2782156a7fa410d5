//! Solvers built on the flow: a single run with its hypothesis certificates,
//! the ε-continuation `L v_ε + ε v_ε + g(v_ε) = 0, ε → 0` toward the
//! minimal-norm solution, and discrepancy-based stopping for noisy data.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{dp_step, integrate, run, FlowConfig, FlowResult, FlowStatus};
use crate::linalg::{operator_norm, symmetric_eigen, VectorH, PSD_REL_TOL};
use crate::model::{
    ball_samples, check_trust_condition, estimate_m1, monotonicity_certificate, Certificate,
    CertificateKind, DsmProblem,
};

/// Ball samples used for the `m₁` estimate of a stand-alone solve.
pub const M1_SAMPLES: usize = 200;
/// Ball samples per continuation step (each step re-estimates `m₁(ε)`).
pub const CONTINUATION_M1_SAMPLES: usize = 40;
pub const SAMPLE_SEED: u64 = 42;
/// Shifted operators with a larger condition number are refused.
pub const MAX_SHIFTED_CONDITION: f64 = 1e12;
/// An inner flow that reaches `t_max` is still accepted when `p` is within
/// this multiple of `ε_mach · cond(L + εI) · (1 + ‖v‖)`.
pub const ATTAINABLE_FACTOR: f64 = 10.0;
/// Default discrepancy constant for [`stop_time_noisy`].
pub const DISCREPANCY_C: f64 = 1.5;

#[derive(Clone, Debug)]
pub struct Solution {
    pub solution: VectorH,
    pub flow: FlowResult,
    /// `m₁` estimate (kind `Invertible`) followed by the trust condition.
    pub certificates: Vec<Certificate>,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.flow.status == FlowStatus::ResidualConverged
    }

    pub fn certificate(&self, kind: CertificateKind) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.kind == kind)
    }

    pub fn m1(&self) -> Option<f64> {
        self.certificate(CertificateKind::Invertible)
            .filter(|c| c.passed)
            .and_then(|c| c.get("m1"))
    }

    pub fn certificates_passed(&self) -> bool {
        self.certificates.iter().all(|c| c.passed)
    }
}

fn hypothesis_certificates(
    p: &DsmProblem,
    m1_samples: usize,
    seed: u64,
) -> Result<Vec<Certificate>> {
    let samples = ball_samples(p.u0(), p.radius(), m1_samples, seed);
    let m1 = match estimate_m1(p, &samples) {
        Ok(c) => c,
        Err(Error::SingularLinearization { sigma_min }) => {
            let mut c = Certificate::new(CertificateKind::Invertible);
            c.set("sigma_min", sigma_min);
            c.notes
                .push("linearization singular at a ball sample".into());
            return Ok(vec![c]);
        }
        Err(e) => return Err(e),
    };
    let trust = check_trust_condition(p, m1.get("m1").unwrap_or(f64::INFINITY))?;
    Ok(vec![m1, trust])
}

/// Runs the flow from `p.u0()` and attaches the `m₁` estimate and the trust
/// condition. A failed certificate does not stop the run.
pub fn solve_wellposed(p: &DsmProblem, cfg: &FlowConfig) -> Result<Solution> {
    solve_with_samples(p, cfg, M1_SAMPLES, SAMPLE_SEED)
}

pub fn solve_with_samples(
    p: &DsmProblem,
    cfg: &FlowConfig,
    m1_samples: usize,
    seed: u64,
) -> Result<Solution> {
    let certificates = hypothesis_certificates(p, m1_samples.max(1), seed)?;
    let flow = integrate(p, cfg)?;
    Ok(Solution {
        solution: flow.u_final.clone(),
        flow,
        certificates,
    })
}

/// Geometric schedule `ε_k = eps0 · ratio^k`, `k < count`, clamped below at
/// `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsSchedule {
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
    pub floor: f64,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule {
            eps0: 1.0,
            ratio: 0.5,
            count: 20,
            floor: 1e-8,
        }
    }
}

impl EpsSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.eps0 > self.floor) || !self.eps0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "schedule needs eps0 > floor > 0, got eps0 = {}, floor = {}",
                self.eps0, self.floor
            )));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidParameter(
                "schedule count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The shifts in order, and whether the floor cut the schedule short.
    pub fn values(&self) -> Result<(Vec<f64>, bool)> {
        self.validate()?;
        let mut out: Vec<f64> = Vec::with_capacity(self.count);
        let mut truncated = false;
        for k in 0..self.count {
            let mut eps = self.eps0 * self.ratio.powi(k as i32);
            if eps < self.floor {
                eps = self.floor;
                truncated = true;
            }
            if out.last() != Some(&eps) {
                out.push(eps);
            }
        }
        Ok((out, truncated))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRecord {
    pub eps: f64,
    pub v: VectorH,
    pub norm_v: f64,
    /// `‖L v + g(v)‖`, the residual of the unregularized equation.
    pub residual_full: f64,
    /// `‖L v + ε v + g(v)‖`
    pub residual_eps: f64,
    pub status: FlowStatus,
    pub inner_steps: usize,
    /// The inner flow ran to `t_max` with `p` already at the rounding floor
    /// `ε_mach · cond(L + εI)` and was accepted there.
    pub precision_limited: bool,
    pub m1: Option<f64>,
    pub trust_passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerFailure {
    pub step: usize,
    pub eps: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub records: Vec<ContinuationRecord>,
    /// Iterate at the smallest shift reached.
    pub v_limit: VectorH,
    /// Linear-in-ε extrapolation from the last two iterates; diagnostic only.
    pub v_extrapolated: Option<VectorH>,
    pub norms_monotone_ok: bool,
    /// `‖v_{k+1} − v_k‖`
    pub cauchy_increments: Vec<f64>,
    /// The schedule was clamped at its floor.
    pub floor_truncated: bool,
    /// Shifts skipped because `L + εI` was too ill-conditioned.
    pub condition_skipped: Vec<f64>,
    pub lambda_min: f64,
    pub monotonicity: Certificate,
    pub failure: Option<InnerFailure>,
}

impl ContinuationResult {
    /// Turns a recorded inner failure into an error.
    pub fn ensure_complete(&self) -> Result<()> {
        match &self.failure {
            Some(f) => Err(Error::InnerSolveFailed {
                step: f.step,
                reason: f.reason.clone(),
            }),
            None => Ok(()),
        }
    }

    /// `eps,norm_v,residual_full,increment,inner_steps`; the increment of
    /// the first row is 0.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "eps,norm_v,residual_full,increment,inner_steps")?;
        for (k, r) in self.records.iter().enumerate() {
            let inc = if k == 0 {
                0.0
            } else {
                self.cauchy_increments[k - 1]
            };
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.eps, r.norm_v, r.residual_full, inc, r.inner_steps
            )?;
        }
        Ok(())
    }
}

/// Checks that `L` is self-adjoint PSD and returns `λ_min` and `λ_max`.
fn psd_spectrum(p: &DsmProblem) -> Result<(f64, f64)> {
    let l = p.operator();
    let values = symmetric_eigen(l)?.values;
    let scale = operator_norm(l);
    let lambda_min = values[0];
    if lambda_min < -PSD_REL_TOL * scale {
        return Err(Error::NonPsdOperator { lambda_min });
    }
    Ok((lambda_min, *values.last().unwrap()))
}

/// Monotonicity of `g` on 64 samples of the start ball.
pub fn check_monotone(p: &DsmProblem) -> Result<Certificate> {
    let samples = ball_samples(p.u0(), p.radius(), 64, SAMPLE_SEED);
    monotonicity_certificate(p.nonlinearity(), &samples)
}

/// ε-continuation toward the minimal-norm solution of `Lv + g(v) = 0`.
///
/// Each shift is solved by the flow, warm-started from the previous iterate
/// (from `pbase.u0()` for the first). The trust condition and `m₁(ε)` are
/// re-evaluated at every step and recorded. An inner failure stops the
/// continuation and is reported in `failure` next to the partial records.
pub fn solve_continuation(
    pbase: &DsmProblem,
    sched: &EpsSchedule,
    cfg: &FlowConfig,
) -> Result<ContinuationResult> {
    let (shifts, floor_truncated) = sched.values()?;
    cfg.validate()?;
    let (lambda_min, lambda_max) = psd_spectrum(pbase)?;
    let monotonicity = check_monotone(pbase)?;
    if !monotonicity.passed {
        return Err(Error::CertificateMismatch {
            tag: "MonotoneG".into(),
            detail: "g failed the monotonicity certificate on the start ball".into(),
        });
    }

    let mut records: Vec<ContinuationRecord> = Vec::new();
    let mut condition_skipped = Vec::new();
    let mut failure = None;
    let mut start = pbase.u0().clone();
    for (k, &eps) in shifts.iter().enumerate() {
        let cond = (lambda_max + eps) / (lambda_min.max(0.0) + eps);
        if cond > MAX_SHIFTED_CONDITION {
            condition_skipped.push(eps);
            continue;
        }
        let pk = pbase
            .with_epsilon(eps)?
            .with_start(start.clone(), pbase.radius())?;
        let outcome = solve_with_samples(&pk, cfg, CONTINUATION_M1_SAMPLES, SAMPLE_SEED + k as u64);
        // residuals below this are rounding noise of the shifted solves
        let attainable =
            |s: &Solution| ATTAINABLE_FACTOR * f64::EPSILON * cond * (1.0 + s.solution.norm());
        let mut precision_limited = false;
        let sol = match outcome {
            Ok(s) if s.converged() => s,
            Ok(s)
                if s.flow.status == FlowStatus::TMaxReached && s.flow.p_final <= attainable(&s) =>
            {
                precision_limited = true;
                s
            }
            Ok(s) => {
                failure = Some(InnerFailure {
                    step: k,
                    eps,
                    reason: format!("flow ended with status {:?}", s.flow.status),
                });
                break;
            }
            Err(e) => {
                failure = Some(InnerFailure {
                    step: k,
                    eps,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let v = sol.solution.clone();
        records.push(ContinuationRecord {
            eps,
            norm_v: v.norm(),
            residual_full: pk.unregularized_residual(&v)?.norm(),
            residual_eps: pk.full_residual(&v)?.norm(),
            status: sol.flow.status,
            inner_steps: sol.flow.accepted_steps,
            precision_limited,
            m1: sol.m1(),
            trust_passed: sol.certificates_passed(),
            v: v.clone(),
        });
        start = v;
    }

    let cauchy_increments: Vec<f64> = records
        .windows(2)
        .map(|w| w[1].v.distance(&w[0].v))
        .collect();
    let v_limit = records
        .last()
        .map(|r| r.v.clone())
        .unwrap_or_else(|| pbase.u0().clone());
    let v_extrapolated = match records.as_slice() {
        [.., a, b] if b.eps < a.eps => {
            let r = b.eps / a.eps;
            let mut x = b.v.clone();
            x.axpy(-r, &a.v);
            Some(x.scaled(1.0 / (1.0 - r)))
        }
        _ => None,
    };
    let norms_monotone_ok = match records.last() {
        Some(last) => {
            let max = records.iter().map(|r| r.norm_v).fold(0.0, f64::max);
            max <= last.norm_v + 1e-6 * (1.0 + last.norm_v)
        }
        None => false,
    };
    Ok(ContinuationResult {
        records,
        v_limit,
        v_extrapolated,
        norms_monotone_ok,
        cauchy_increments,
        floor_truncated,
        condition_skipped,
        lambda_min,
        monotonicity,
        failure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalNormReport {
    pub cauchy_increments: Vec<f64>,
    pub oracle_norm: Option<f64>,
    /// Every `‖v_ε‖ ≤ ‖oracle‖ + 1e-8`.
    pub norm_bound_ok: Option<bool>,
    /// `max_k ‖v_{ε_k}‖ − ‖oracle‖`
    pub max_norm_excess: Option<f64>,
    pub limit_error: Option<f64>,
    /// `‖v_{ε_k} − oracle‖` per record.
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln ‖v_ε − oracle‖` against `ln ε`.
    pub empirical_rate: Option<f64>,
}

pub fn minimal_norm_diagnostics(
    r: &ContinuationResult,
    oracle_v: Option<&VectorH>,
) -> MinimalNormReport {
    let mut report = MinimalNormReport {
        cauchy_increments: r.cauchy_increments.clone(),
        oracle_norm: None,
        norm_bound_ok: None,
        max_norm_excess: None,
        limit_error: None,
        errors: Vec::new(),
        empirical_rate: None,
    };
    let Some(v) = oracle_v else {
        return report;
    };
    let vn = v.norm();
    let max_norm = r
        .records
        .iter()
        .map(|x| x.norm_v)
        .fold(f64::NEG_INFINITY, f64::max);
    report.oracle_norm = Some(vn);
    report.norm_bound_ok = Some(r.records.iter().all(|x| x.norm_v <= vn + 1e-8));
    report.max_norm_excess = Some(max_norm - vn);
    report.limit_error = Some(r.v_limit.distance(v));
    report.errors = r.records.iter().map(|x| x.v.distance(v)).collect();

    let pts: Vec<(f64, f64)> = r
        .records
        .iter()
        .zip(&report.errors)
        .filter(|(_, e)| **e > 1e-13)
        .map(|(x, e)| (x.eps.ln(), e.ln()))
        .collect();
    if pts.len() >= 2 {
        let n = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - xm) * (x - xm)).sum();
        if sxx > 0.0 {
            report.empirical_rate = Some(sxy / sxx);
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyStop {
    pub t_delta: f64,
    pub u: VectorH,
    /// `‖Lu + εu + g(u)‖` at `t_delta`.
    pub residual: f64,
}

/// Discrepancy stopping with `C = 1.5`; see [`stop_time_noisy_with`].
pub fn stop_time_noisy(p: &DsmProblem, delta: f64, cfg: &FlowConfig) -> Result<NoisyStop> {
    stop_time_noisy_with(p, delta, DISCREPANCY_C, cfg)
}

/// Integrates the flow and stops at the first time `t` with
/// `‖F(u(t))‖ ≤ C·δ`. The crossing inside the last accepted step is located
/// by bisection on single integrator steps from the step's start point.
pub fn stop_time_noisy_with(
    p: &DsmProblem,
    delta: f64,
    c: f64,
    cfg: &FlowConfig,
) -> Result<NoisyStop> {
    if !(delta > 0.0) || !(c >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "discrepancy stop needs delta > 0 and C >= 1, got delta = {delta}, C = {c}"
        )));
    }
    let level = c * delta;
    let residual = |u: &VectorH| -> Result<f64> { Ok(p.full_residual(u)?.norm()) };
    let r0 = residual(p.u0())?;
    if r0 <= level {
        return Ok(NoisyStop {
            t_delta: 0.0,
            u: p.u0().clone(),
            residual: r0,
        });
    }

    let mut fire = |u: &VectorH| -> Result<bool> { Ok(residual(u)? <= level) };
    let (flow, bracket) = run(p, cfg, Some(&mut fire))?;
    let Some(b) = bracket else {
        return Err(Error::TMaxReached { t_max: cfg.t_max });
    };

    // residual(lo) > level >= residual(hi), as offsets from the step start
    let (mut lo, mut hi) = (0.0, b.h);
    let mut u_hi = flow.u_final;
    let mut r_hi = residual(&u_hi)?;
    for _ in 0..200 {
        if r_hi >= level * (1.0 - 1e-9) || hi - lo <= 1e-15 * (b.t + hi).max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let u_mid = dp_step(p, cfg, &b.u, &b.du, mid)?;
        let r_mid = residual(&u_mid)?;
        if r_mid <= level {
            hi = mid;
            u_hi = u_mid;
            r_hi = r_mid;
        } else {
            lo = mid;
        }
    }
    Ok(NoisyStop {
        t_delta: b.t + hi,
        u: u_hi,
        residual: r_hi,
    })
}
