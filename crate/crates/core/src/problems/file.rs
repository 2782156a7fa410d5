//! Problem files: a JSON document
//!
//! ```json
//! {
//!   "name": "diag",
//!   "dim": 2,
//!   "L": { "inline": [[1.0, 0.0], [0.0, 0.0]], "flags": { "self_adjoint": true, "psd_claimed": true } },
//!   "g": { "builtin": "constant", "params": { "c": [-1.0, 0.0] } },
//!   "u0": [0.0, 0.0],
//!   "R": 4.0,
//!   "epsilon": 0.0,
//!   "tags": ["SelfAdjointPsd", "MonotoneG", "Singular"]
//! }
//! ```
//!
//! `L` is one of `{"inline": rows}`, `{"file": path}` (matrix text format,
//! relative to the problem file) or `{"builtin": {"name": ...}}` with names
//! `identity`, `zero`, `hilbert` and `diag` (`"values": [...]`). Optional
//! fields: `sector` (`{"a", "delta"}`), `known_solution`,
//! `min_norm_solution`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{finish, hilbert, ProblemInstance, Tag};
use crate::error::{Error, Result};
use crate::linalg::{read_matrix, DenseOperator, OperatorFlags, VectorH};
use crate::model::{BuiltinG, DsmProblem, NonlinearMap, Sector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    File(PathBuf),
    Builtin(BuiltinMatrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BuiltinMatrix {
    Identity,
    Zero,
    Hilbert,
    Diag { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    #[serde(flatten)]
    pub source: MatrixSource,
    #[serde(default)]
    pub flags: OperatorFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub name: String,
    pub dim: usize,
    #[serde(rename = "L")]
    pub l: MatrixSpec,
    pub g: BuiltinG,
    pub u0: Vec<f64>,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub tags: BTreeSet<Tag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<Sector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_solution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_norm_solution: Option<Vec<f64>>,
}

fn field_error(context: &str, field: &str, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        context: context.to_string(),
        line: None,
        message: format!("field `{field}`: {message}"),
    }
}

fn flag_mismatch(e: Error) -> Error {
    match e {
        Error::NotSymmetric { .. } | Error::NonPsdOperator { .. } => Error::CertificateMismatch {
            tag: "L.flags".into(),
            detail: e.to_string(),
        },
        other => other,
    }
}

fn vector(context: &str, field: &str, coords: &[f64], dim: usize) -> Result<VectorH> {
    if coords.len() != dim {
        return Err(field_error(
            context,
            field,
            format!("expected {dim} entries, got {}", coords.len()),
        ));
    }
    VectorH::new(coords.to_vec()).map_err(|e| field_error(context, field, e))
}

fn build_matrix(
    spec: &MatrixSpec,
    dim: usize,
    base: Option<&Path>,
    context: &str,
) -> Result<DenseOperator> {
    let l = match &spec.source {
        MatrixSource::Inline(rows) => {
            DenseOperator::from_rows(rows).map_err(|e| field_error(context, "L", e))?
        }
        MatrixSource::File(path) => {
            let full = match base {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.clone(),
            };
            read_matrix(&full).map_err(flag_mismatch)?
        }
        MatrixSource::Builtin(b) => match b {
            BuiltinMatrix::Identity => DenseOperator::identity(dim),
            BuiltinMatrix::Zero => DenseOperator::zeros(dim),
            BuiltinMatrix::Hilbert => hilbert(dim),
            BuiltinMatrix::Diag { values } => {
                if values.len() != dim || values.iter().any(|x| !x.is_finite()) {
                    return Err(field_error(
                        context,
                        "L",
                        "diag values must be dim finite reals",
                    ));
                }
                DenseOperator::from_row_major(
                    dim,
                    (0..dim * dim)
                        .map(|k| {
                            if k / dim == k % dim {
                                values[k / dim]
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )?
            }
        },
    };
    if l.dim() != dim {
        return Err(field_error(
            context,
            "L",
            format!("matrix has dim {}, expected {dim}", l.dim()),
        ));
    }
    let present = l.flags();
    let flags = OperatorFlags {
        self_adjoint: present.self_adjoint || spec.flags.self_adjoint,
        psd_claimed: present.psd_claimed || spec.flags.psd_claimed,
    };
    l.with_flags(flags).map_err(flag_mismatch)
}

/// Builds a problem from the JSON text, verifying every tag. `base` is the
/// directory that relative matrix paths are resolved against.
pub fn parse_problem(text: &str, base: Option<&Path>, context: &str) -> Result<ProblemInstance> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let dim = file.dim;
    if dim == 0 {
        return Err(field_error(context, "dim", "must be positive"));
    }
    let l = build_matrix(&file.l, dim, base, context)?;
    let g = NonlinearMap::builtin(file.g.clone())
        .map_err(|e| field_error(context, "g", e))?
        .with_monotone_claim(file.tags.contains(&Tag::MonotoneG));
    if g.dim() != dim {
        return Err(field_error(
            context,
            "g",
            format!("map has dim {}, expected {dim}", g.dim()),
        ));
    }
    let u0 = vector(context, "u0", &file.u0, dim)?;
    let known = file
        .known_solution
        .as_deref()
        .map(|x| vector(context, "known_solution", x, dim))
        .transpose()?;
    let min_norm = file
        .min_norm_solution
        .as_deref()
        .map(|x| vector(context, "min_norm_solution", x, dim))
        .transpose()?;
    let problem = DsmProblem::new(l, g, u0, file.radius, file.epsilon).map_err(|e| match e {
        Error::InvalidParameter(m) => field_error(context, "R/epsilon", m),
        other => other,
    })?;
    let tags: Vec<Tag> = file.tags.iter().copied().collect();
    finish(&file.name, problem, &tags, file.sector, known, min_norm)
}

pub fn load_problem(path: &Path) -> Result<ProblemInstance> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text, path.parent(), &path.display().to_string())
}

/// File representation of a problem; the operator is written inline.
pub fn problem_to_json(inst: &ProblemInstance) -> Result<ProblemFile> {
    let p = &inst.problem;
    let g = p
        .nonlinearity()
        .as_builtin()
        .ok_or_else(|| Error::NotApplicable("only built-in nonlinearities can be saved".into()))?;
    Ok(ProblemFile {
        name: inst.name.clone(),
        dim: p.dim(),
        l: MatrixSpec {
            source: MatrixSource::Inline(p.operator().rows()),
            flags: p.operator().flags(),
        },
        g: g.clone(),
        u0: p.u0().as_slice().to_vec(),
        radius: p.radius(),
        epsilon: p.epsilon(),
        tags: inst.tags.clone(),
        sector: inst.sector,
        known_solution: inst.known_solution.as_ref().map(|x| x.as_slice().to_vec()),
        min_norm_solution: inst
            .min_norm_solution
            .as_ref()
            .map(|x| x.as_slice().to_vec()),
    })
}

pub fn save_problem(path: &Path, inst: &ProblemInstance) -> Result<()> {
    let file = problem_to_json(inst)?;
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_singular_monotone, gen_wellposed_cubic};

    const DIAG: &str = r#"{
  "name": "diag",
  "dim": 2,
  "L": { "inline": [[1.0, 0.0], [0.0, 0.0]], "flags": { "self_adjoint": true, "psd_claimed": true } },
  "g": { "builtin": "constant", "params": { "c": [-1.0, 0.0] } },
  "u0": [0.0, 0.0],
  "R": 4.0,
  "tags": ["SelfAdjointPsd", "MonotoneG", "Singular"]
}"#;

    #[test]
    fn loads_the_diagonal_family() {
        let inst = parse_problem(DIAG, None, "diag").unwrap();
        assert!(inst.tags.contains(&Tag::Singular));
        assert_eq!(inst.nullspace.len(), 1);
        assert_eq!(inst.problem.epsilon(), 0.0);
        assert!(inst.problem.operator().flags().psd_claimed);
    }

    #[test]
    fn asymmetric_matrix_with_self_adjoint_flag_is_a_mismatch() {
        let text = DIAG.replace("[[1.0, 0.0], [0.0, 0.0]]", "[[1.0, 2.0], [0.0, 0.0]]");
        assert!(matches!(
            parse_problem(&text, None, "x"),
            Err(Error::CertificateMismatch { .. })
        ));
    }

    #[test]
    fn false_tag_is_a_mismatch() {
        let text = DIAG.replace("[[1.0, 0.0], [0.0, 0.0]]", "[[1.0, 0.0], [0.0, 2.0]]");
        match parse_problem(&text, None, "x") {
            Err(Error::CertificateMismatch { tag, .. }) => assert_eq!(tag, "Singular"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let text = DIAG.replace("\"u0\": [0.0, 0.0],", "\"u0\": [0.0, 0.0]");
        match parse_problem(&text, None, "x") {
            Err(Error::Parse { line: Some(l), .. }) => assert_eq!(l, 7),
            other => panic!("unexpected {other:?}"),
        }
        let text = DIAG.replace("\"u0\": [0.0, 0.0]", "\"u0\": [0.0]");
        match parse_problem(&text, None, "x") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("u0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtin_and_file_matrices() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("l.txt"),
            "dim 2\n1 0\n0 0\nflags self_adjoint psd\n",
        )
        .unwrap();
        let text = DIAG.replace(
            r#"{ "inline": [[1.0, 0.0], [0.0, 0.0]], "flags": { "self_adjoint": true, "psd_claimed": true } }"#,
            r#"{ "file": "l.txt" }"#,
        );
        let path = dir.path().join("p.json");
        std::fs::write(&path, text).unwrap();
        let inst = load_problem(&path).unwrap();
        assert_eq!(
            inst.problem.operator().rows(),
            vec![vec![1.0, 0.0], vec![0.0, 0.0]]
        );

        let text = DIAG.replace(
            r#"{ "inline": [[1.0, 0.0], [0.0, 0.0]], "flags": { "self_adjoint": true, "psd_claimed": true } }"#,
            r#"{ "builtin": { "name": "diag", "values": [1.0, 0.0] } }"#,
        );
        assert!(parse_problem(&text, None, "x").is_ok());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for inst in [
            gen_wellposed_cubic(7, 0.1, 3).unwrap(),
            gen_singular_monotone(5, 3, 0.2, false, 3).unwrap(),
        ] {
            let path = dir.path().join(format!("{}.json", inst.name));
            save_problem(&path, &inst).unwrap();
            let back = load_problem(&path).unwrap();
            let a = inst.problem.operator().as_row_major();
            let b = back.problem.operator().as_row_major();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(back.problem.u0(), inst.problem.u0());
            assert_eq!(
                back.problem.radius().to_bits(),
                inst.problem.radius().to_bits()
            );
            assert_eq!(
                back.problem.nonlinearity().as_builtin(),
                inst.problem.nonlinearity().as_builtin()
            );
            assert_eq!(back.tags, inst.tags);
            assert_eq!(back.min_norm_solution, inst.min_norm_solution);
        }
    }
}
