//! The continuous Newton-type flow `u̇ = Φ(u)`, `u(0) = u₀`, with
//! `Φ(u) = −[I + (L+εI)⁻¹ g′(u)]⁻¹ (u + (L+εI)⁻¹ g(u))`.
//!
//! Along exact trajectories the preconditioned residual
//! `p(t) = ‖u + (L+εI)⁻¹ g(u)‖` obeys `p(t) = p(0) e⁻ᵗ`, so any deviation
//! from that law measures integrator error alone. [`integrate`] tracks it at
//! every accepted step.

mod dopri;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{smallest_singular_value, LuFactors, VectorH, PIVOT_REL_TOL};
use crate::model::{DsmProblem, SINGULAR_LINEARIZATION_TOL};

use dopri::Controller;

/// Integration and stopping parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop once `p(t) ≤ p_stop · p(0)`.
    pub p_stop: f64,
    /// Absolute floor for the residual stop.
    pub p_floor: f64,
    pub max_steps: usize,
    /// Trajectory recording cadence in flow time.
    pub sample_stride: f64,
    /// Upper bound on accepted step sizes.
    pub h_max: f64,
    /// End the run with `FlowStatus::LeftBall` at the first ball exit
    /// instead of only flagging it.
    pub stop_on_ball_exit: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            t_max: 30.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            p_stop: 1e-10,
            p_floor: 1e-14,
            max_steps: 1_000_000,
            sample_stride: 0.1,
            h_max: 0.1,
            stop_on_ball_exit: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_max", self.t_max),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("sample_stride", self.sample_stride),
            ("h_max", self.h_max),
        ];
        for (name, x) in positive {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        if !(self.p_stop >= 0.0) || !(self.p_floor >= 0.0) {
            return Err(Error::InvalidParameter(
                "residual thresholds must be nonnegative".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub u: VectorH,
    /// `‖u + (L+εI)⁻¹ g(u)‖`
    pub p: f64,
    /// `‖Lu + εu + g(u)‖`
    pub residual_f: f64,
    /// Size of the step that reached this point (0 at the start).
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowStatus {
    ResidualConverged,
    TMaxReached,
    StepFailure,
    LeftBall,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowResult {
    pub trajectory: Vec<TrajectoryPoint>,
    pub u0: VectorH,
    pub u_final: VectorH,
    pub status: FlowStatus,
    pub p0: f64,
    pub p_final: f64,
    pub t_final: f64,
    /// `max |p(t) − p(0)e⁻ᵗ| / p(0)` over accepted steps.
    pub decay_deviation: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    /// Whether some accepted step had `‖u(t) − u₀‖ > R`.
    pub left_ball: bool,
    pub ball_exit_time: Option<f64>,
    pub max_ball_distance: f64,
}

/// The flow field `Φ(u) = −[I + (L+εI)⁻¹ g′(u)]⁻¹ (u + (L+εI)⁻¹ g(u))`.
///
/// Computed with one dense solve against the assembled linearization; the
/// inverse is never formed.
pub fn phi(p: &DsmProblem, u: &VectorH) -> Result<VectorH> {
    let residual = p.preconditioned_residual(u)?;
    let lin = p.linearized_operator(u)?;
    let singular = |lin| Error::SingularLinearization {
        sigma_min: smallest_singular_value(lin),
    };
    let lu = LuFactors::factor(&lin, PIVOT_REL_TOL).map_err(|_| singular(&lin))?;
    // the pivot screen is cheap; confirm with the exact σ_min only when it trips
    if lu.min_pivot() < SINGULAR_LINEARIZATION_TOL
        && smallest_singular_value(&lin) < SINGULAR_LINEARIZATION_TOL
    {
        return Err(singular(&lin));
    }
    Ok(lu.solve(&residual).scaled(-1.0))
}

fn point(p: &DsmProblem, t: f64, u: &VectorH, pt: f64, step: f64) -> Result<TrajectoryPoint> {
    Ok(TrajectoryPoint {
        t,
        u: u.clone(),
        p: pt,
        residual_f: p.full_residual(u)?.norm(),
        step,
    })
}

/// Integrates the flow from `p.u0()` with an adaptive Dormand–Prince 5(4)
/// pair until `p(t) ≤ max(p_stop·p(0), p_floor)` or `t = t_max`.
///
/// Steps are clipped to land on the recording grid `k · sample_stride`, so
/// recorded times are exact. Leaving the ball `B(u₀, R)` is flagged; it only
/// ends the run when `cfg.stop_on_ball_exit` is set.
pub fn integrate(p: &DsmProblem, cfg: &FlowConfig) -> Result<FlowResult> {
    run(p, cfg, None).map(|(r, _)| r)
}

/// The accepted step on which an event fired: its start point, the flow
/// field there, and its length.
pub(crate) struct Bracket {
    pub t: f64,
    pub u: VectorH,
    pub du: VectorH,
    pub h: f64,
}

pub(crate) type Event<'a> = &'a mut dyn FnMut(&VectorH) -> Result<bool>;

/// Single Dormand–Prince step of length `h` from `u`, given `du = Φ(u)`.
pub(crate) fn dp_step(
    p: &DsmProblem,
    cfg: &FlowConfig,
    u: &VectorH,
    du: &VectorH,
    h: f64,
) -> Result<VectorH> {
    let ctl = Controller::new(cfg.rel_tol, cfg.abs_tol);
    let mut rhs = |y: &VectorH| phi(p, y);
    Ok(ctl.step(&mut rhs, u, du, h)?.y)
}

/// Integration loop shared by [`integrate`] and event-driven stopping. With
/// an event the residual stop is disabled and the run ends on the first
/// accepted step whose end point triggers the event.
pub(crate) fn run(
    p: &DsmProblem,
    cfg: &FlowConfig,
    mut event: Option<Event<'_>>,
) -> Result<(FlowResult, Option<Bracket>)> {
    cfg.validate()?;
    let u0 = p.u0().clone();
    let p0 = p.preconditioned_residual(&u0)?.norm();
    let target = (cfg.p_stop * p0).max(cfg.p_floor);

    let mut result = FlowResult {
        trajectory: vec![point(p, 0.0, &u0, p0, 0.0)?],
        u0: u0.clone(),
        u_final: u0.clone(),
        status: FlowStatus::ResidualConverged,
        p0,
        p_final: p0,
        t_final: 0.0,
        decay_deviation: 0.0,
        accepted_steps: 0,
        rejected_steps: 0,
        rhs_evals: 0,
        left_ball: false,
        ball_exit_time: None,
        max_ball_distance: 0.0,
    };
    if p0 <= target && event.is_none() {
        return Ok((result, None));
    }

    let mut evals = 0usize;
    let mut rhs = |y: &VectorH| -> Result<VectorH> {
        evals += 1;
        phi(p, y)
    };
    let mut ctl = Controller::new(cfg.rel_tol, cfg.abs_tol);

    let mut t = 0.0;
    let mut u = u0.clone();
    let mut du = rhs(&u)?;
    let mut h = ctl.initial_step(&mut rhs, &u, &du)?.min(cfg.h_max);
    let mut next_record = 1usize;
    let mut pt = p0;
    let status;
    let mut bracket = None;

    loop {
        if result.accepted_steps + result.rejected_steps >= cfg.max_steps {
            status = FlowStatus::StepFailure;
            break;
        }
        let t_record = (next_record as f64 * cfg.sample_stride).min(cfg.t_max);
        let h_try = h.min(cfg.h_max).min(t_record - t);
        if h_try < 1e-14 {
            return Err(Error::StepFailure { t });
        }
        let trial = ctl.step(&mut rhs, &u, &du, h_try)?;
        if !(trial.err <= 1.0) || !trial.y.is_finite() {
            result.rejected_steps += 1;
            let shrink = if trial.err.is_finite() {
                ctl.reject(trial.err)
            } else {
                0.2
            };
            h = h_try * shrink;
            continue;
        }

        result.accepted_steps += 1;
        let grow = ctl.accept(trial.err);
        let clipped = h_try < h;
        h = if clipped {
            h.max(h_try * grow)
        } else {
            h_try * grow
        };
        let on_grid = (t_record - (t + h_try)).abs() <= 1e-12 * t_record.max(1.0);
        let t_prev = t;
        t = if on_grid { t_record } else { t + h_try };
        let u_prev = std::mem::replace(&mut u, trial.y);
        let du_prev = std::mem::replace(&mut du, trial.dy);

        pt = p.preconditioned_residual(&u)?.norm();
        let deviation = (pt - p0 * (-t).exp()).abs() / p0;
        result.decay_deviation = result.decay_deviation.max(deviation);

        let dist = u.distance(&u0);
        result.max_ball_distance = result.max_ball_distance.max(dist);
        let mut stop = None;
        if dist > p.radius() && !result.left_ball {
            result.left_ball = true;
            result.ball_exit_time = Some(t);
            if cfg.stop_on_ball_exit {
                stop = Some(FlowStatus::LeftBall);
            }
        }
        match event.as_mut() {
            Some(fire) => {
                if stop.is_none() && fire(&u)? {
                    stop = Some(FlowStatus::ResidualConverged);
                    bracket = Some(Bracket {
                        t: t_prev,
                        u: u_prev,
                        du: du_prev,
                        h: h_try,
                    });
                }
            }
            None => {
                if stop.is_none() && pt <= target {
                    stop = Some(FlowStatus::ResidualConverged);
                }
            }
        }
        if stop.is_none() && t >= cfg.t_max {
            stop = Some(FlowStatus::TMaxReached);
        }

        if on_grid || stop.is_some() {
            result.trajectory.push(point(p, t, &u, pt, h_try)?);
            if on_grid {
                next_record += 1;
            }
        }
        if let Some(s) = stop {
            status = s;
            break;
        }
    }

    result.status = status;
    result.u_final = u;
    result.p_final = pt;
    result.t_final = t;
    result.rhs_evals = evals;
    Ok((result, bracket))
}

/// Summary of how closely a run followed `p(t) = p(0)e⁻ᵗ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p0: f64,
    pub decay_deviation: f64,
    /// Least-squares slope of `ln p` against `t`; exactly −1 for the
    /// continuous flow, 0 by convention when fewer than two usable points.
    pub fitted_rate: f64,
}

pub fn decay_report(r: &FlowResult) -> DecayReport {
    let floor = 100.0 * f64::EPSILON * r.p0;
    let pts: Vec<(f64, f64)> = r
        .trajectory
        .iter()
        .filter(|q| r.p0 > 0.0 && q.p > floor)
        .map(|q| (q.t, q.p.ln()))
        .collect();
    let fitted_rate = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let tm = pts.iter().map(|x| x.0).sum::<f64>() / n;
        let ym = pts.iter().map(|x| x.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(t, y)| (t - tm) * (y - ym)).sum();
        let sxx: f64 = pts.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    DecayReport {
        p0: r.p0,
        decay_deviation: r.decay_deviation,
        fitted_rate,
    }
}

/// Checks the a-priori estimates `‖u(t) − u(∞)‖ ≤ m₁ p(0) e⁻ᵗ` and
/// `‖u(t) − u₀‖ ≤ m₁ p(0)` on the recorded trajectory, with `u_final`
/// standing in for `u(∞)` and an allowance of `1e-7 · p(0)`.
///
/// Only meaningful for converged runs; returns `false` otherwise.
pub fn error_bound_check(r: &FlowResult, m1: f64) -> bool {
    if r.status != FlowStatus::ResidualConverged {
        return false;
    }
    let slack = 1e-7 * r.p0;
    r.trajectory.iter().all(|q| {
        q.u.distance(&r.u_final) <= m1 * r.p0 * (-q.t).exp() + slack
            && q.u.distance(&r.u0) <= m1 * r.p0 + slack
    })
}

/// Writes the trajectory as CSV (`t,p,residual_F,u_norm,step`), 17
/// significant digits per value.
pub fn write_trajectory_csv<W: Write>(r: &FlowResult, mut w: W) -> io::Result<()> {
    writeln!(w, "t,p,residual_F,u_norm,step")?;
    for q in &r.trajectory {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            q.t,
            q.p,
            q.residual_f,
            q.u.norm(),
            q.step
        )?;
    }
    Ok(())
}
