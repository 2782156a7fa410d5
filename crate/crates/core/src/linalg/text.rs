//! Plain-text matrix format.
//!
//! ```text
//! dim 2
//! 1 0
//! 0 0
//! flags self_adjoint psd
//! ```
//!
//! The `flags` line is optional. Blank lines and lines starting with `#`
//! are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{DenseOperator, OperatorFlags};
use crate::error::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: "matrix text".into(),
        line: Some(line),
        message: message.into(),
    }
}

/// Parses the text format, verifying any declared flags.
pub fn parse_matrix(src: &str) -> Result<DenseOperator> {
    let mut lines = src
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let dim: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["dim", n] => n
            .parse()
            .map_err(|_| parse_err(ln, format!("invalid dimension `{n}`")))?,
        _ => return Err(parse_err(ln, "expected `dim <n>`")),
    };
    if dim == 0 {
        return Err(parse_err(ln, "dimension must be positive"));
    }

    let mut data = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        let (ln, row) = lines
            .next()
            .ok_or_else(|| parse_err(ln + r + 1, format!("expected {dim} rows, found {r}")))?;
        let before = data.len();
        for tok in row.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid number `{tok}`")))?;
            if !x.is_finite() {
                return Err(parse_err(ln, "non-finite entry"));
            }
            data.push(x);
        }
        if data.len() - before != dim {
            return Err(parse_err(
                ln,
                format!("expected {dim} entries, found {}", data.len() - before),
            ));
        }
    }

    let mut flags = OperatorFlags::default();
    if let Some((ln, line)) = lines.next() {
        let mut toks = line.split_whitespace();
        if toks.next() != Some("flags") {
            return Err(parse_err(ln, "unexpected trailing content"));
        }
        for t in toks {
            match t {
                "self_adjoint" => flags.self_adjoint = true,
                "psd" => flags.psd_claimed = true,
                other => return Err(parse_err(ln, format!("unknown flag `{other}`"))),
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "unexpected content after flags"));
        }
    }

    DenseOperator::from_row_major(dim, data)?.with_flags(flags)
}

/// Writes the text format. Entries use the shortest representation that
/// parses back to the identical `f64`.
pub fn format_matrix(a: &DenseOperator) -> String {
    let n = a.dim();
    let mut out = format!("dim {n}\n");
    for i in 0..n {
        let row: Vec<String> = a.row(i).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let flags = a.flags();
    if flags.self_adjoint || flags.psd_claimed {
        out.push_str("flags");
        if flags.self_adjoint {
            out.push_str(" self_adjoint");
        }
        if flags.psd_claimed {
            out.push_str(" psd");
        }
        let _ = writeln!(out);
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DenseOperator> {
    let src = std::fs::read_to_string(path)?;
    parse_matrix(&src).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            context: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

pub fn write_matrix(path: &Path, a: &DenseOperator) -> Result<()> {
    std::fs::write(path, format_matrix(a))?;
    Ok(())
}
