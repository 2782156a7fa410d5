use std::path::{Path, PathBuf};

use dsm_core::problems::{builtin, parse_problem};
use dsm_core::{Error, ProblemInstance, Result};

use crate::settings::Settings;

#[derive(Clone, Debug)]
pub enum Source {
    Builtin(String),
    File(PathBuf),
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Builtin(name) => name.clone(),
            Source::File(path) => path.display().to_string(),
        }
    }
}

pub fn sources(s: &Settings) -> Vec<Source> {
    s.builtin
        .iter()
        .cloned()
        .map(Source::Builtin)
        .chain(s.problem.iter().cloned().map(Source::File))
        .collect()
}

/// A loaded problem. When a problem file claims a tag that fails its
/// certificate and the caller allows it, the problem is rebuilt without
/// tags and `mismatch` keeps the failure.
pub struct Loaded {
    pub inst: ProblemInstance,
    pub claimed_tags: Vec<String>,
    pub mismatch: Option<Error>,
}

fn strip_tags(text: &str) -> Option<(String, Vec<String>)> {
    let mut doc: serde_json::Value = serde_json::from_str(text).ok()?;
    let obj = doc.as_object_mut()?;
    let tags = obj
        .insert("tags".into(), serde_json::Value::Array(Vec::new()))
        .and_then(|t| serde_json::from_value::<Vec<String>>(t).ok())
        .unwrap_or_default();
    Some((doc.to_string(), tags))
}

fn read_file(path: &Path, keep_going: bool, untagged: bool) -> Result<Loaded> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let context = path.display().to_string();
    let base = path.parent();
    let (stripped, claimed) = strip_tags(&text).unwrap_or_else(|| (text.clone(), Vec::new()));
    if untagged {
        let inst = parse_problem(&stripped, base, &context)?;
        return Ok(Loaded {
            inst,
            claimed_tags: claimed,
            mismatch: None,
        });
    }
    match parse_problem(&text, base, &context) {
        Ok(inst) => Ok(Loaded {
            inst,
            claimed_tags: claimed,
            mismatch: None,
        }),
        Err(e @ Error::CertificateMismatch { .. }) if keep_going && e_is_tag(&e) => {
            let inst = parse_problem(&stripped, base, &context)?;
            Ok(Loaded {
                inst,
                claimed_tags: claimed,
                mismatch: Some(e),
            })
        }
        Err(e) => Err(e),
    }
}

/// Flag contradictions on `L` are matrix errors, not tag failures.
fn e_is_tag(e: &Error) -> bool {
    matches!(e, Error::CertificateMismatch { tag, .. } if tag != "L.flags")
}

/// Loads a problem and applies `--epsilon`.
///
/// `keep_going` rebuilds a file problem without its tags when one fails
/// verification; `untagged` skips tag verification altogether.
pub fn load(src: &Source, s: &Settings, keep_going: bool, untagged: bool) -> Result<Loaded> {
    let mut loaded = match src {
        Source::Builtin(name) => {
            let inst = builtin(name, &s.gen_params())?;
            let claimed_tags = inst.tags.iter().map(|t| t.to_string()).collect();
            Loaded {
                inst,
                claimed_tags,
                mismatch: None,
            }
        }
        Source::File(path) => read_file(path, keep_going, untagged)?,
    };
    if let Some(eps) = s.epsilon {
        loaded.inst.problem = loaded.inst.problem.with_epsilon(eps)?;
    }
    Ok(loaded)
}
