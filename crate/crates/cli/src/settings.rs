use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use dsm_core::problems::GenParams;
use dsm_core::{EpsSchedule, Error, FlowConfig, Result};

/// Flags shared by every subcommand. The same fields, in snake_case, are
/// accepted in a `--config` JSON file; flags given on the command line win.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Built-in problem name (repeatable)
    #[arg(long, value_name = "NAME")]
    pub builtin: Vec<String>,
    /// Problem file in JSON (repeatable)
    #[arg(long, value_name = "PATH")]
    pub problem: Vec<PathBuf>,
    /// JSON file with defaults for any of these flags
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub dim: Option<usize>,
    /// Rank of L for the singular generators
    #[arg(long)]
    pub rank: Option<usize>,
    /// Strength of the nonlinear term for the generators
    #[arg(long)]
    pub scale: Option<f64>,
    /// Noise level for `noisy_linear`
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the problem's regularization shift
    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub eps_ratio: Option<f64>,
    #[arg(long)]
    pub eps_count: Option<usize>,
    #[arg(long)]
    pub eps_floor: Option<f64>,

    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub p_stop: Option<f64>,

    /// Agreement tolerance for oracle-check
    #[arg(long)]
    pub oracle_tol: Option<f64>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads across problems in batch mode
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! or_fields {
    ($a:ident, $b:ident; $($f:ident),*) => {
        $( $a.$f = $a.$f.or($b.$f); )*
    };
}

impl Settings {
    /// Reads the `--config` file, if any, and fills unset flags from it.
    pub fn resolve(mut self) -> Result<Settings> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let base = read_config(&path)?;
        if self.builtin.is_empty() && self.problem.is_empty() {
            self.builtin = base.builtin;
            self.problem = base
                .problem
                .into_iter()
                .map(|p| match path.parent() {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p,
                })
                .collect();
        }
        or_fields!(self, base; dim, rank, scale, delta, seed, epsilon, eps0, eps_ratio, eps_count,
            eps_floor, t_max, rel_tol, abs_tol, p_stop, oracle_tol, out, jobs);
        Ok(self)
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams {
            dim: self.dim,
            rank: self.rank,
            scale: self.scale,
            delta: self.delta,
            seed: self.seed,
        }
    }

    pub fn flow(&self) -> Result<FlowConfig> {
        let mut cfg = FlowConfig::default();
        if let Some(x) = self.t_max {
            cfg.t_max = x;
        }
        if let Some(x) = self.rel_tol {
            cfg.rel_tol = x;
        }
        if let Some(x) = self.abs_tol {
            cfg.abs_tol = x;
        }
        if let Some(x) = self.p_stop {
            cfg.p_stop = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<EpsSchedule> {
        let mut s = EpsSchedule::default();
        if let Some(x) = self.eps0 {
            s.eps0 = x;
        }
        if let Some(x) = self.eps_ratio {
            s.ratio = x;
        }
        if let Some(x) = self.eps_count {
            s.count = x;
        }
        if let Some(x) = self.eps_floor {
            s.floor = x;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("dsm-out"))
    }
}

fn read_config(path: &Path) -> Result<Settings> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        line: Some(e.line()),
        message: e.to_string(),
    })
}
