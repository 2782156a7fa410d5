//! End-to-end runs through the public API.

use dsm_core::flow::{error_bound_check, FlowConfig};
use dsm_core::oracles::{newton_oracle, pseudoinverse_min_norm};
use dsm_core::problems::{
    builtin, gen_illconditioned, gen_singular_monotone, load_problem, save_problem, GenParams, Tag,
};
use dsm_core::regularization::{
    minimal_norm_diagnostics, solve_continuation, solve_wellposed, EpsSchedule,
};
use dsm_core::{BuiltinG, CertificateKind, Error, VectorH};

#[test]
fn wellposed_cubic_dim20_certificates_pass() {
    let inst = builtin(
        "wellposed_cubic",
        &GenParams {
            dim: Some(20),
            ..GenParams::default()
        },
    )
    .unwrap();
    assert!(inst.tags.contains(&Tag::TrustCondition));
    let s = solve_wellposed(&inst.problem, &FlowConfig::default()).unwrap();
    assert!(s.converged());
    assert!(s.certificates_passed());
    assert!(error_bound_check(&s.flow, s.m1().unwrap()));
    let v = inst.known_solution.unwrap();
    assert!(s.solution.distance(&v) < 1e-8);
}

#[test]
fn cubic_problem_agrees_with_newton() {
    let inst = builtin(
        "wellposed_cubic",
        &GenParams {
            dim: Some(8),
            scale: Some(1.0),
            seed: Some(3),
            ..GenParams::default()
        },
    )
    .unwrap();
    let p = &inst.problem;
    let s = solve_wellposed(p, &FlowConfig::default()).unwrap();
    let n = newton_oracle(p, p.u0(), 1e-13).unwrap();
    assert!(s.solution.distance(&n.solution) <= 1e-8);
}

#[test]
fn singular_with_cubic_converges_to_min_norm_point() {
    let inst = gen_singular_monotone(5, 3, 0.5, false, 42).unwrap();
    let sched = EpsSchedule {
        count: 30,
        ..EpsSchedule::default()
    };
    let r = solve_continuation(&inst.problem, &sched, &FlowConfig::default()).unwrap();
    r.ensure_complete().unwrap();
    let x = inst.min_norm_solution.unwrap();
    let d = minimal_norm_diagnostics(&r, Some(&x));
    let n = x.norm();
    assert!(r
        .records
        .iter()
        .all(|rec| rec.norm_v <= n + 1e-6 * (1.0 + n)));
    assert!(d.limit_error.unwrap() < 1e-5, "{:?}", d.limit_error);
    assert!(r.norms_monotone_ok);
    // m1(ε) is recorded at every step
    assert!(r.records.iter().all(|x| x.m1.is_some()));
}

#[test]
fn cauchy_increments_shrink_geometrically_on_linear_family() {
    let inst = gen_singular_monotone(5, 3, 0.0, false, 42).unwrap();
    let sched = EpsSchedule::default();
    let r = solve_continuation(&inst.problem, &sched, &FlowConfig::default()).unwrap();
    let inc = &r.cauchy_increments;
    for k in 3..inc.len() {
        assert!(
            inc[k] <= inc[k - 1] * (sched.ratio + 0.2),
            "step {k}: {} vs {}",
            inc[k],
            inc[k - 1]
        );
    }
    for rec in &r.records {
        assert!(rec.residual_eps <= 1e-8, "{}", rec.residual_eps);
    }
    let last = r.records.last().unwrap();
    assert!(last.residual_full <= 10.0 * (last.eps * r.v_limit.norm() + 1e-8));
}

#[test]
fn nonsingular_continuation_matches_direct_solve() {
    let inst = builtin(
        "wellposed_cubic",
        &GenParams {
            dim: Some(6),
            ..GenParams::default()
        },
    )
    .unwrap();
    let p = &inst.problem;
    let sched = EpsSchedule {
        count: 40,
        ..EpsSchedule::default()
    };
    let r = solve_continuation(p, &sched, &FlowConfig::default()).unwrap();
    r.ensure_complete().unwrap();
    let direct = solve_wellposed(p, &FlowConfig::default()).unwrap();
    assert!(r.v_limit.distance(&direct.solution) <= 1e-6);
    let d = minimal_norm_diagnostics(&r, Some(&direct.solution));
    assert!(d.limit_error.unwrap() <= 1e-6);
}

#[test]
fn hilbert_continuation_norms_bounded_by_pseudoinverse() {
    let inst = gen_illconditioned(8, 0.0, 42).unwrap();
    let p = &inst.problem;
    let Some(BuiltinG::Cubic { c, .. }) = p.nonlinearity().as_builtin() else {
        panic!("cubic family expected")
    };
    let b = VectorH::new(c.clone()).unwrap().scaled(-1.0);
    let x = pseudoinverse_min_norm(p.operator(), &b).unwrap();
    let r = solve_continuation(p, &EpsSchedule::default(), &FlowConfig::default()).unwrap();
    r.ensure_complete().unwrap();
    for rec in &r.records {
        assert!(rec.norm_v <= x.norm() + 1e-6 * (1.0 + x.norm()));
    }
}

#[test]
fn saved_problem_reloads_and_solves_identically() {
    let dir = tempfile::tempdir().unwrap();
    let inst = builtin(
        "wellposed_cubic",
        &GenParams {
            dim: Some(5),
            ..GenParams::default()
        },
    )
    .unwrap();
    let path = dir.path().join("p.json");
    save_problem(&path, &inst).unwrap();
    let back = load_problem(&path).unwrap();
    let a = solve_wellposed(&inst.problem, &FlowConfig::default()).unwrap();
    let b = solve_wellposed(&back.problem, &FlowConfig::default()).unwrap();
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.flow.trajectory.len(), b.flow.trajectory.len());
}

#[test]
fn singular_operator_without_shift_is_an_error() {
    let inst = gen_singular_monotone(2, 1, 0.0, true, 42).unwrap();
    assert!(matches!(
        solve_wellposed(&inst.problem, &FlowConfig::default()),
        Err(Error::SingularOperator { .. })
    ));
    // a positive shift makes it well posed
    let shifted = inst.problem.with_epsilon(0.5).unwrap();
    let s = solve_wellposed(&shifted, &FlowConfig::default()).unwrap();
    assert!(
        s.solution
            .distance(&VectorH::new(vec![2.0 / 3.0, 0.0]).unwrap())
            < 1e-9
    );
    assert!(s.certificate(CertificateKind::Invertible).unwrap().passed);
}
