//! `dsm`: runs the flow solvers on built-in or file problems and writes
//! CSV trajectories, JSON reports and certificates.
//!
//! Exit codes: 0 success, 1 solver error or failed check, 2 certificate
//! failure (solve/certify; the run is still performed), 3 monotonicity or
//! positivity failure (continue), 4 usage or configuration error. In batch
//! mode the largest code wins.

mod commands;
mod settings;
mod source;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use commands::{run, Command, Outcome, EXIT_USAGE};
use settings::Settings;
use source::{sources, Source};

#[derive(Parser)]
#[command(
    name = "dsm",
    version,
    about = "Continuous Newton flows for Lv + g(v) = 0"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the flow on a well-posed problem
    Solve(Settings),
    /// Solve the shifted problems for a decreasing sequence of shifts
    Continue(Settings),
    /// Check the hypotheses a problem claims
    Certify(Settings),
    /// Compare the solver against an independent oracle
    OracleCheck(Settings),
    /// Check the residual decay law at three integrator tolerances
    DecayAudit(Settings),
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn out_dir(base: &Path, all: &[Source], k: usize) -> PathBuf {
    if all.len() == 1 {
        return base.to_path_buf();
    }
    let stem = match &all[k] {
        Source::Builtin(name) => name.clone(),
        Source::File(path) => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "problem".into()),
    };
    base.join(format!("{k:02}_{stem}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (cmd, raw) = match cli.command {
        Cmd::Solve(s) => (Command::Solve, s),
        Cmd::Continue(s) => (Command::Continue, s),
        Cmd::Certify(s) => (Command::Certify, s),
        Cmd::OracleCheck(s) => (Command::OracleCheck, s),
        Cmd::DecayAudit(s) => (Command::DecayAudit, s),
    };
    let s = match raw.resolve() {
        Ok(s) => s,
        Err(e) => return usage_error(e),
    };
    let all = sources(&s);
    if all.is_empty() {
        return usage_error(format!(
            "{} needs --builtin NAME or --problem PATH",
            cmd.name()
        ));
    }
    let jobs = s.jobs.unwrap_or(1);
    if jobs == 0 {
        return usage_error("--jobs must be at least 1");
    }
    if let Err(e) = s.flow().and_then(|_| s.schedule()) {
        return usage_error(e);
    }

    let base = s.out_dir();
    let results: Vec<Mutex<Option<Outcome>>> = all.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        if k >= all.len() {
            break;
        }
        let out = run(cmd, &all[k], &s, &out_dir(&base, &all, k));
        *results[k].lock().unwrap() = Some(out);
    };
    std::thread::scope(|scope| {
        for _ in 1..jobs.min(all.len()) {
            scope.spawn(worker);
        }
        worker();
    });

    let mut code = 0;
    for slot in results {
        let out = slot.into_inner().unwrap().expect("every problem runs");
        for line in &out.stdout {
            println!("{line}");
        }
        for line in &out.stderr {
            eprintln!("{line}");
        }
        code = code.max(out.code);
    }
    ExitCode::from(code as u8)
}
