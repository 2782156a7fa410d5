use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dsm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const NON_MONOTONE: &str = r#"{
  "name": "non_monotone",
  "dim": 2,
  "L": { "inline": [[1.0, 0.0], [0.0, 0.0]] },
  "g": { "builtin": "linear", "params": { "b": [[-0.5, 0.0], [0.0, -0.5]], "c": [-1.0, 0.0] } },
  "u0": [0.0, 0.0],
  "R": 4.0
}"#;

// u0 is the root: 2 + 1 - 3 = 0, 3 + 1 - 4 = 0
const AT_ROOT: &str = r#"{
  "name": "at_root",
  "dim": 2,
  "L": { "builtin": { "name": "diag", "values": [2.0, 3.0] } },
  "g": { "builtin": "cubic", "params": { "scale": 1.0, "c": [-3.0, -4.0] } },
  "u0": [1.0, 1.0],
  "R": 1.0,
  "tags": ["Invertible", "TrustCondition"]
}"#;

const TINY_BALL: &str = r#"{
  "name": "tiny_ball",
  "dim": 2,
  "L": { "builtin": { "name": "diag", "values": [2.0, 3.0] } },
  "g": { "builtin": "cubic", "params": { "scale": 1.0, "c": [-3.0, -4.0] } },
  "u0": [0.0, 0.0],
  "R": 0.01,
  "tags": ["TrustCondition"]
}"#;

#[test]
fn solve_wellposed_cubic_reports_decay() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(
        &["solve", "--builtin", "wellposed_cubic", "--dim", "10"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["command"], "solve");
    assert_eq!(r["status"], "ResidualConverged");
    assert!(r["decay_deviation"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["error_bound_ok"], true);
    assert_eq!(r["solution"].as_array().unwrap().len(), 10);
    let c = json(&dir.path().join("certificates.json"));
    assert!(c["run_certificates"]
        .as_array()
        .unwrap()
        .iter()
        .all(|x| x["passed"] == true));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,p,residual_F,u_norm,step\n"));
    assert_eq!(
        csv.lines().count() - 1,
        r["trajectory_points"].as_u64().unwrap() as usize
    );
}

#[test]
fn identical_runs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = dsm(
            &["solve", "--builtin", "wellposed_cubic", "--seed", "7"],
            d.path(),
        );
        assert_eq!(code(&o), 0);
    }
    for name in ["trajectory.csv", "report.json", "certificates.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn continuation_csv_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = dsm(
            &[
                "continue",
                "--builtin",
                "singular_monotone",
                "--scale",
                "0.5",
            ],
            d.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let x = fs::read(a.path().join("continuation.csv")).unwrap();
    let y = fs::read(b.path().join("continuation.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn start_at_the_root_gives_a_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "root.json", AT_ROOT);
    let out = dir.path().join("out");
    let o = dsm(&["solve", "--problem", &p], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(json(&out.join("report.json"))["trajectory_points"], 1);
}

#[test]
fn singular_operator_without_shift_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["solve", "--builtin", "singular_diag"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("singular operator"), "{}", stderr(&o));
    // with a shift the same problem solves
    let o = dsm(
        &["solve", "--builtin", "singular_diag", "--epsilon", "0.5"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn failed_tag_still_runs_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "tiny.json", TINY_BALL);
    let out = dir.path().join("out");
    let o = dsm(&["solve", "--problem", &p], &out);
    assert_eq!(code(&o), 2);
    let r = json(&out.join("report.json"));
    assert_eq!(r["exploratory"], true);
    assert_eq!(r["status"], "ResidualConverged");
    let c = json(&out.join("certificates.json"));
    assert!(c["tag_mismatch"]
        .as_str()
        .unwrap()
        .contains("TrustCondition"));

    let o = dsm(&["certify", "--problem", &p], &out);
    assert_eq!(code(&o), 2);
    assert_eq!(
        json(&out.join("report.json"))["failed_tags"][0],
        "TrustCondition"
    );
}

#[test]
fn certify_builtins() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "wellposed_cubic",
        "singular_monotone",
        "sector_nonsymmetric",
    ] {
        let o = dsm(&["certify", "--builtin", name], dir.path());
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert_eq!(json(&dir.path().join("report.json"))["all_passed"], true);
    }
    let c = json(&dir.path().join("certificates.json"));
    assert_eq!(c["tags"][0]["tag"], "Sector");
    assert_eq!(c["resolvent_bound"]["passed"], true);
}

#[test]
fn diagonal_family_continuation_reaches_its_limit() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(
        &[
            "continue",
            "--builtin",
            "singular_diag",
            "--eps-count",
            "30",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("report.json"));
    let norms: Vec<f64> = r["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["norm_v"].as_f64().unwrap())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] > w[0]));
    assert!(norms.iter().all(|n| *n < 1.0));
    let v = &r["v_limit"];
    assert!((v[0].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(v[1].as_f64().unwrap().abs() < 1e-6);
    assert_eq!(r["oracle_source"], "min_norm_solution");
    assert!(r["minimal_norm"]["limit_error"].as_f64().unwrap() < 1e-6);
    let csv = fs::read_to_string(dir.path().join("continuation.csv")).unwrap();
    assert!(csv.starts_with("eps,norm_v,residual_full,increment,inner_steps\n"));
}

#[test]
fn eps_floor_truncation_is_noted() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(
        &[
            "continue",
            "--builtin",
            "singular_diag",
            "--eps-floor",
            "1e-4",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("truncated"));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["floor_truncated"], true);
    assert!(r["notes"][0].as_str().unwrap().contains("truncated"));
    let last = r["records"].as_array().unwrap().last().unwrap()["eps"]
        .as_f64()
        .unwrap();
    assert_eq!(last, 1e-4);
}

#[test]
fn non_monotone_g_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "nm.json", NON_MONOTONE);
    let o = dsm(&["continue", "--problem", &p], &dir.path().join("out"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("MonotoneG"));
    // claiming the tag fails at load with the same code
    let tagged = NON_MONOTONE.replace("\"R\": 4.0", "\"R\": 4.0, \"tags\": [\"MonotoneG\"]");
    let p = write(dir.path(), "nm_tagged.json", &tagged);
    let o = dsm(&["continue", "--problem", &p], &dir.path().join("out"));
    assert_eq!(code(&o), 3);
}

#[test]
fn decay_audit_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["decay-audit", "--builtin", "wellposed_cubic"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("report.json"));
    let levels = r["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 3);
    for l in levels {
        assert!(l["decay_deviation"].as_f64().unwrap() <= 100.0 * l["level"].as_f64().unwrap());
    }
    assert_eq!(r["passed"], true);

    let o = dsm(
        &[
            "decay-audit",
            "--builtin",
            "wellposed_cubic",
            "--rel-tol",
            "1e-2",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert_eq!(json(&dir.path().join("report.json"))["passed"], false);
}

#[test]
fn oracle_check_agrees_on_builtins() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "wellposed_cubic",
        "noisy_linear",
        "singular_diag",
        "illconditioned",
    ] {
        let o = dsm(&["oracle-check", "--builtin", name], dir.path());
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert_eq!(json(&dir.path().join("report.json"))["agree"], true);
    }
}

#[test]
fn batch_mode_with_jobs_matches_sequential() {
    let par = tempfile::tempdir().unwrap();
    let seq = tempfile::tempdir().unwrap();
    let args = [
        "solve",
        "--builtin",
        "wellposed_cubic",
        "--builtin",
        "noisy_linear",
        "--builtin",
        "sector_nonsymmetric",
    ];
    let o = dsm(&[&args[..], &["--jobs", "3"]].concat(), par.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = dsm(&args, seq.path());
    assert_eq!(stdout(&o), stdout(&s));
    for sub in [
        "00_wellposed_cubic",
        "01_noisy_linear",
        "02_sector_nonsymmetric",
    ] {
        let x = fs::read(par.path().join(sub).join("trajectory.csv")).unwrap();
        let y = fs::read(seq.path().join(sub).join("trajectory.csv")).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn batch_exit_code_is_the_largest() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "tiny.json", TINY_BALL);
    let o = dsm(
        &["solve", "--builtin", "wellposed_cubic", "--problem", &p],
        &dir.path().join("out"),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{ "builtin": ["wellposed_cubic"], "dim": 4, "t_max": 2.0 }"#,
    );
    let out = dir.path().join("out");
    let o = dsm(&["solve", "--config", &cfg], &out);
    // t_max 2 stops the flow early
    assert_eq!(code(&o), 1);
    let r = json(&out.join("report.json"));
    assert_eq!(r["dim"], 4);
    assert_eq!(r["status"], "TMaxReached");

    let o = dsm(&["solve", "--config", &cfg, "--t-max", "40"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&out.join("report.json"))["dim"], 4);

    let bad = write(dir.path(), "bad.json", r#"{ "dimension": 4 }"#);
    assert_eq!(code(&dsm(&["solve", "--config", &bad], &out)), 4);
}

#[test]
fn usage_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dsm(&["solve"], dir.path())), 4);
    assert_eq!(
        code(&dsm(
            &["solve", "--builtin", "wellposed_cubic", "--rel-tol", "-1"],
            dir.path()
        )),
        4
    );
    assert_eq!(code(&dsm(&["frobnicate"], dir.path())), 4);
    let o = dsm(&["solve", "--builtin", "no_such_problem"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown built-in"));
}
