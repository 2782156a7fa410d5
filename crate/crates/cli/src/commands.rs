use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use dsm_core::flow::{decay_report, error_bound_check, write_trajectory_csv};
use dsm_core::model::check_resolvent_bound;
use dsm_core::oracles::{newton_oracle, pseudoinverse_min_norm};
use dsm_core::problems::verify_tags;
use dsm_core::regularization::{minimal_norm_diagnostics, solve_continuation, solve_wellposed};
use dsm_core::{
    integrate, BuiltinG, Error, FlowConfig, FlowStatus, ProblemInstance, Result, Tag, VectorH,
};

use crate::settings::Settings;
use crate::source::{load, Loaded, Source};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CERTIFICATE: i32 = 2;
pub const EXIT_MONOTONE: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

const AUDIT_LEVELS: [f64; 3] = [1e-6, 1e-8, 1e-10];
const AUDIT_FACTOR: f64 = 100.0;
const AUDIT_FLOOR: f64 = 1e-13;
const WELLPOSED_ORACLE_TOL: f64 = 1e-7;
const NEWTON_TOL: f64 = 1e-13;
const RESOLVENT_SHIFTS: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Continue,
    Certify,
    OracleCheck,
    DecayAudit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Continue => "continue",
            Command::Certify => "certify",
            Command::OracleCheck => "oracle-check",
            Command::DecayAudit => "decay-audit",
        }
    }
}

/// What one problem run printed and how it ended.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<String>,
    pub stderr: Vec<String>,
}

impl Outcome {
    fn fail(code: i32, label: &str, e: impl std::fmt::Display) -> Outcome {
        Outcome {
            code,
            stdout: Vec::new(),
            stderr: vec![format!("error: {label}: {e}")],
        }
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn tag_names(tags: &BTreeSet<Tag>) -> Vec<String> {
    tags.iter().map(|t| t.to_string()).collect()
}

/// Runs `cmd` on one problem and writes its outputs into `dir`.
pub fn run(cmd: Command, src: &Source, s: &Settings, dir: &Path) -> Outcome {
    let label = src.label();
    let result = fs::create_dir_all(dir)
        .map_err(Error::from)
        .and_then(|_| match cmd {
            Command::Solve => solve(src, s, dir),
            Command::Continue => continuation(src, s, dir),
            Command::Certify => certify(src, s, dir),
            Command::OracleCheck => oracle_check(src, s, dir),
            Command::DecayAudit => decay_audit(src, s, dir),
        });
    match result {
        Ok(mut out) => {
            for line in out.stderr.iter_mut() {
                *line = format!("{label}: {line}");
            }
            out
        }
        Err(e) => {
            let code = match (&e, cmd) {
                (Error::NonPsdOperator { .. }, Command::Continue) => EXIT_MONOTONE,
                (Error::CertificateMismatch { tag, .. }, Command::Continue)
                    if ["MonotoneG", "SelfAdjointPsd", "L.flags"].contains(&tag.as_str()) =>
                {
                    EXIT_MONOTONE
                }
                (
                    Error::CertificateMismatch { .. },
                    Command::Solve | Command::Certify | Command::Continue,
                ) => EXIT_CERTIFICATE,
                _ => EXIT_SOLVER,
            };
            Outcome::fail(code, &label, e)
        }
    }
}

fn solve(src: &Source, s: &Settings, dir: &Path) -> Result<Outcome> {
    let flow_cfg = s.flow()?;
    let Loaded {
        inst,
        claimed_tags,
        mismatch,
    } = load(src, s, true, false)?;
    let p = &inst.problem;
    let sol = solve_wellposed(p, &flow_cfg)?;
    let decay = decay_report(&sol.flow);
    let bound_ok = sol
        .m1()
        .filter(|_| sol.converged())
        .map(|m1| error_bound_check(&sol.flow, m1));
    let exploratory = mismatch.is_some() || !sol.certificates_passed();

    write_trajectory_csv(&sol.flow, csv_file(dir, "trajectory.csv")?)?;
    write_json(
        dir,
        "certificates.json",
        &json!({
            "command": "solve",
            "problem": inst.name,
            "claimed_tags": claimed_tags,
            "tag_mismatch": mismatch.as_ref().map(|e| e.to_string()),
            "tag_certificates": inst.certificates,
            "run_certificates": sol.certificates,
        }),
    )?;
    let f = &sol.flow;
    write_json(
        dir,
        "report.json",
        &json!({
            "command": "solve",
            "problem": inst.name,
            "source": src.label(),
            "dim": p.dim(),
            "epsilon": p.epsilon(),
            "status": f.status,
            "converged": sol.converged(),
            "exploratory": exploratory,
            "solution": sol.solution,
            "p0": f.p0,
            "p_final": f.p_final,
            "t_final": f.t_final,
            "decay_deviation": f.decay_deviation,
            "fitted_rate": decay.fitted_rate,
            "accepted_steps": f.accepted_steps,
            "rejected_steps": f.rejected_steps,
            "rhs_evals": f.rhs_evals,
            "trajectory_points": f.trajectory.len(),
            "left_ball": f.left_ball,
            "ball_exit_time": f.ball_exit_time,
            "max_ball_distance": f.max_ball_distance,
            "m1": sol.m1(),
            "error_bound_ok": bound_ok,
            "known_solution_error": inst.known_solution.as_ref().map(|v| sol.solution.distance(v)),
            "flow_config": flow_cfg,
        }),
    )?;

    let mut out = Outcome::default();
    out.stdout.push(format!(
        "solve {}: {:?} at t = {:.3}, p = {:.3e}, decay deviation {:.3e}, {} points",
        inst.name,
        f.status,
        f.t_final,
        f.p_final,
        f.decay_deviation,
        f.trajectory.len()
    ));
    if let Some(e) = &mismatch {
        out.stderr.push(format!("exploratory run: {e}"));
    }
    for c in sol.certificates.iter().filter(|c| !c.passed) {
        out.stderr
            .push(format!("exploratory run: certificate {:?} failed", c.kind));
    }
    out.code = if exploratory {
        EXIT_CERTIFICATE
    } else if !sol.converged() {
        out.stderr.push(format!(
            "flow stopped with {:?} before the residual target",
            f.status
        ));
        EXIT_SOLVER
    } else {
        EXIT_OK
    };
    Ok(out)
}

/// The minimal-norm solution to compare against, with where it came from.
fn min_norm_oracle(inst: &ProblemInstance) -> Option<(VectorH, &'static str)> {
    if let Some(v) = &inst.min_norm_solution {
        return Some((v.clone(), "min_norm_solution"));
    }
    if let Some(BuiltinG::Constant { c }) = inst.problem.nonlinearity().as_builtin() {
        let b = VectorH::new(c.iter().map(|x| -x).collect()).ok()?;
        if let Ok(x) = pseudoinverse_min_norm(inst.problem.operator(), &b) {
            return Some((x, "pseudoinverse"));
        }
    }
    match &inst.known_solution {
        Some(v) if !inst.tags.contains(&Tag::Singular) => Some((v.clone(), "known_solution")),
        _ => None,
    }
}

fn continuation(src: &Source, s: &Settings, dir: &Path) -> Result<Outcome> {
    let flow_cfg = s.flow()?;
    let sched = s.schedule()?;
    let Loaded {
        inst, claimed_tags, ..
    } = load(src, s, false, false)?;
    let r = solve_continuation(&inst.problem, &sched, &flow_cfg)?;
    let oracle = min_norm_oracle(&inst);
    let diag = minimal_norm_diagnostics(&r, oracle.as_ref().map(|o| &o.0));
    let (values, _) = sched.values()?;

    let mut notes = Vec::new();
    if r.floor_truncated {
        notes.push(format!("schedule truncated at eps floor {:e}", sched.floor));
    }
    if !r.condition_skipped.is_empty() {
        notes.push(format!(
            "{} shifts skipped as too ill-conditioned",
            r.condition_skipped.len()
        ));
    }
    let limited = r.records.iter().filter(|x| x.precision_limited).count();
    if limited > 0 {
        notes.push(format!(
            "{limited} inner solves stopped at the rounding floor"
        ));
    }

    r.write_csv(csv_file(dir, "continuation.csv")?)?;
    let records: Vec<Value> = r
        .records
        .iter()
        .map(|x| {
            json!({
                "eps": x.eps,
                "norm_v": x.norm_v,
                "residual_full": x.residual_full,
                "residual_eps": x.residual_eps,
                "status": x.status,
                "inner_steps": x.inner_steps,
                "precision_limited": x.precision_limited,
                "m1": x.m1,
                "trust_passed": x.trust_passed,
            })
        })
        .collect();
    write_json(
        dir,
        "certificates.json",
        &json!({
            "command": "continue",
            "problem": inst.name,
            "claimed_tags": claimed_tags,
            "tag_certificates": inst.certificates,
            "monotonicity": r.monotonicity,
            "lambda_min": r.lambda_min,
        }),
    )?;
    write_json(
        dir,
        "report.json",
        &json!({
            "command": "continue",
            "problem": inst.name,
            "source": src.label(),
            "dim": inst.problem.dim(),
            "schedule": sched,
            "schedule_values": values,
            "floor_truncated": r.floor_truncated,
            "notes": notes,
            "records": records,
            "v_limit": r.v_limit,
            "v_extrapolated": r.v_extrapolated,
            "norms_monotone_ok": r.norms_monotone_ok,
            "cauchy_increments": r.cauchy_increments,
            "condition_skipped": r.condition_skipped,
            "failure": r.failure,
            "oracle_source": oracle.as_ref().map(|o| o.1),
            "minimal_norm": oracle.as_ref().map(|_| &diag),
            "flow_config": flow_cfg,
        }),
    )?;

    let mut out = Outcome::default();
    let last = r.records.last();
    out.stdout.push(format!(
        "continue {}: {} shifts, eps_final = {:.3e}, |v| = {:.12}, limit error {}",
        inst.name,
        r.records.len(),
        last.map_or(f64::NAN, |x| x.eps),
        r.v_limit.norm(),
        diag.limit_error
            .map_or("n/a".into(), |e| format!("{e:.3e}"))
    ));
    for n in &notes {
        out.stdout.push(format!("note: {n}"));
    }
    out.code = match r.ensure_complete() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            out.stderr.push(e.to_string());
            EXIT_SOLVER
        }
    };
    Ok(out)
}

fn certify(src: &Source, s: &Settings, dir: &Path) -> Result<Outcome> {
    let Loaded {
        inst, claimed_tags, ..
    } = load(src, s, false, true)?;
    let p = &inst.problem;
    let claimed: BTreeSet<Tag> = claimed_tags
        .iter()
        .filter_map(|t| serde_json::from_value(Value::String(t.clone())).ok())
        .collect();
    let checked: BTreeSet<Tag> = if claimed.is_empty() {
        [Tag::Invertible, Tag::TrustCondition].into()
    } else {
        claimed
    };

    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for &tag in &checked {
        let one: BTreeSet<Tag> = [tag].into();
        let (passed, detail, certs) = match verify_tags(p, &one, inst.sector) {
            Ok(c) => (true, None, c),
            Err(e @ Error::CertificateMismatch { .. }) => (false, Some(e.to_string()), Vec::new()),
            Err(e) => return Err(e),
        };
        if !passed {
            failed.push(tag.to_string());
        }
        entries
            .push(json!({ "tag": tag, "passed": passed, "detail": detail, "certificates": certs }));
    }
    let resolvent = match check_resolvent_bound(p, &RESOLVENT_SHIFTS, inst.sector) {
        Ok(c) => Some(c),
        Err(Error::NotApplicable(_)) => None,
        Err(e) => return Err(e),
    };

    write_json(
        dir,
        "certificates.json",
        &json!({
            "command": "certify",
            "problem": inst.name,
            "tags": entries,
            "resolvent_bound": resolvent,
        }),
    )?;
    write_json(
        dir,
        "report.json",
        &json!({
            "command": "certify",
            "problem": inst.name,
            "source": src.label(),
            "dim": p.dim(),
            "checked_tags": tag_names(&checked),
            "failed_tags": failed,
            "all_passed": failed.is_empty(),
        }),
    )?;

    let mut out = Outcome::default();
    out.stdout.push(format!(
        "certify {}: {}/{} tags hold",
        inst.name,
        checked.len() - failed.len(),
        checked.len()
    ));
    for t in &failed {
        out.stderr.push(format!("tag {t} failed its certificate"));
    }
    out.code = if failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_CERTIFICATE
    };
    Ok(out)
}

fn oracle_check(src: &Source, s: &Settings, dir: &Path) -> Result<Outcome> {
    let flow_cfg = s.flow()?;
    let Loaded { inst, .. } = load(src, s, false, false)?;
    let p = &inst.problem;
    // problems that only claim the continuation hypotheses are checked
    // through the shifted solves
    let shifted = inst.tags.contains(&Tag::Singular)
        || (inst.tags.contains(&Tag::SelfAdjointPsd)
            && inst.tags.contains(&Tag::MonotoneG)
            && !inst.tags.contains(&Tag::Invertible)
            && !inst.tags.contains(&Tag::TrustCondition));
    let mut out = Outcome::default();

    let (agree, report) = if shifted {
        let sched = s.schedule()?;
        let r = solve_continuation(p, &sched, &flow_cfg)?;
        r.ensure_complete()?;
        r.write_csv(csv_file(dir, "continuation.csv")?)?;
        let Some((x, origin)) = min_norm_oracle(&inst) else {
            return Err(Error::NotApplicable(
                "no minimal-norm oracle solution for this problem".into(),
            ));
        };
        let diag = minimal_norm_diagnostics(&r, Some(&x));
        let eps_last = r.records.last().map_or(f64::NAN, |x| x.eps);
        // the shifted solutions approach the limit at a rate of order ε
        let tol = s
            .oracle_tol
            .unwrap_or(0.0)
            .max(10.0 * eps_last * (1.0 + x.norm()));
        let err = diag.limit_error.unwrap_or(f64::INFINITY);
        out.stdout.push(format!(
            "oracle-check {}: |v_limit - x_min| = {err:.3e} (tolerance {tol:.3e}, oracle {origin})",
            inst.name
        ));
        (
            err <= tol,
            json!({
                "mode": "continuation",
                "oracle_source": origin,
                "oracle_solution": x,
                "v_limit": r.v_limit,
                "eps_final": eps_last,
                "distance": err,
                "tolerance": tol,
                "minimal_norm": diag,
            }),
        )
    } else {
        let sol = solve_wellposed(p, &flow_cfg)?;
        write_trajectory_csv(&sol.flow, csv_file(dir, "trajectory.csv")?)?;
        let newton = newton_oracle(p, p.u0(), NEWTON_TOL)?;
        let d = sol.solution.distance(&newton.solution);
        let tol = s.oracle_tol.unwrap_or(WELLPOSED_ORACLE_TOL);
        out.stdout.push(format!(
            "oracle-check {}: |flow - newton| = {d:.3e} (tolerance {tol:.3e}, {} Newton iterations)",
            inst.name, newton.iterations
        ));
        (
            d <= tol && sol.converged(),
            json!({
                "mode": "wellposed",
                "status": sol.flow.status,
                "flow_solution": sol.solution,
                "oracle": newton,
                "distance": d,
                "tolerance": tol,
                "known_solution_error": inst.known_solution.as_ref().map(|v| sol.solution.distance(v)),
            }),
        )
    };

    let mut doc = json!({
        "command": "oracle-check",
        "problem": inst.name,
        "source": src.label(),
        "dim": p.dim(),
        "agree": agree,
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut doc, report) {
        a.extend(b);
    }
    write_json(dir, "report.json", &doc)?;
    if !agree {
        out.stderr.push("solver and oracle disagree".into());
    }
    out.code = if agree { EXIT_OK } else { EXIT_SOLVER };
    Ok(out)
}

fn decay_audit(src: &Source, s: &Settings, dir: &Path) -> Result<Outcome> {
    let base = s.flow()?;
    let Loaded { inst, .. } = load(src, s, false, false)?;
    let mut levels = Vec::new();
    let mut devs = Vec::new();
    let mut within = true;
    for level in AUDIT_LEVELS {
        let rel_tol = s.rel_tol.unwrap_or(level);
        let cfg = FlowConfig {
            rel_tol,
            abs_tol: s.abs_tol.unwrap_or(rel_tol * 1e-2),
            ..base.clone()
        };
        let r = integrate(&inst.problem, &cfg)?;
        if r.status == FlowStatus::StepFailure {
            return Err(Error::StepFailure { t: r.t_final });
        }
        let threshold = AUDIT_FACTOR * level;
        let ok = r.decay_deviation <= threshold;
        within &= ok;
        devs.push(r.decay_deviation);
        levels.push(json!({
            "level": level,
            "rel_tol": cfg.rel_tol,
            "abs_tol": cfg.abs_tol,
            "status": r.status,
            "decay_deviation": r.decay_deviation,
            "fitted_rate": decay_report(&r).fitted_rate,
            "threshold": threshold,
            "within_threshold": ok,
            "accepted_steps": r.accepted_steps,
        }));
    }
    let shrinking = devs
        .windows(2)
        .all(|w| w[1] < w[0] || (w[0] < AUDIT_FLOOR && w[1] < AUDIT_FLOOR));
    let passed = within && shrinking;
    write_json(
        dir,
        "report.json",
        &json!({
            "command": "decay-audit",
            "problem": inst.name,
            "source": src.label(),
            "dim": inst.problem.dim(),
            "injected_rel_tol": s.rel_tol,
            "levels": levels,
            "shrinking": shrinking,
            "within_thresholds": within,
            "passed": passed,
        }),
    )?;

    let mut out = Outcome::default();
    let list: Vec<String> = devs.iter().map(|d| format!("{d:.3e}")).collect();
    out.stdout.push(format!(
        "decay-audit {}: deviations {}",
        inst.name,
        list.join(", ")
    ));
    if !within {
        out.stderr
            .push(format!("deviation above {AUDIT_FACTOR} x level"));
    }
    if !shrinking {
        out.stderr
            .push("deviation does not shrink with the tolerance".into());
    }
    out.code = if passed { EXIT_OK } else { EXIT_SOLVER };
    Ok(out)
}
