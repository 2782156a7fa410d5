use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseOperator, VectorH};

/// A smooth nonlinear map `g: H → H` with its Fréchet derivative.
///
/// Implementations must be pure: the same input always yields the same
/// output, with no interior mutability.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, u: &VectorH) -> VectorH;
    fn jacobian(&self, u: &VectorH) -> DenseOperator;
}

/// Built-in nonlinearities. These are the ones a problem file can name.
///
/// Serialized as `{"builtin": "<name>", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "builtin",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum BuiltinG {
    /// `g ≡ 0`
    Zero { dim: usize },
    /// `g ≡ c`
    Constant { c: Vec<f64> },
    /// `g(u) = B u + c`
    Linear {
        b: Vec<Vec<f64>>,
        #[serde(default)]
        c: Vec<f64>,
    },
    /// `g(u)ᵢ = scale · uᵢ³ + cᵢ`
    Cubic { scale: f64, c: Vec<f64> },
    /// `g(u) = c + scale · Pᵀ (P u)³` where the rows of `P` are `basis`.
    ProjectedCubic {
        scale: f64,
        basis: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    /// `g(u)ᵢ = scale · atan(uᵢ) + cᵢ`
    Arctan { scale: f64, c: Vec<f64> },
}

impl BuiltinG {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinG::Zero { .. } => "zero",
            BuiltinG::Constant { .. } => "constant",
            BuiltinG::Linear { .. } => "linear",
            BuiltinG::Cubic { .. } => "cubic",
            BuiltinG::ProjectedCubic { .. } => "projected_cubic",
            BuiltinG::Arctan { .. } => "arctan",
        }
    }

    /// Checks parameter shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("g `{}`: {m}", self.name())));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let n = self.dim();
        if n == 0 {
            return bad("dimension must be positive".into());
        }
        match self {
            BuiltinG::Zero { .. } => {}
            BuiltinG::Constant { c } => {
                if !finite(c) {
                    return bad("non-finite offset".into());
                }
            }
            BuiltinG::Linear { b, c } => {
                if b.iter().any(|r| r.len() != n) {
                    return bad("matrix `b` must be square".into());
                }
                if !c.is_empty() && c.len() != n {
                    return bad(format!("offset has length {}, expected {n}", c.len()));
                }
                if !b.iter().all(|r| finite(r)) || !finite(c) {
                    return bad("non-finite entries".into());
                }
            }
            BuiltinG::Cubic { scale, c } | BuiltinG::Arctan { scale, c } => {
                if !scale.is_finite() || !finite(c) {
                    return bad("non-finite parameters".into());
                }
            }
            BuiltinG::ProjectedCubic { scale, basis, c } => {
                if basis.iter().any(|r| r.len() != n) {
                    return bad(format!("basis rows must have length {n}"));
                }
                if !scale.is_finite() || !finite(c) || !basis.iter().all(|r| finite(r)) {
                    return bad("non-finite parameters".into());
                }
            }
        }
        Ok(())
    }

    fn offset(&self) -> Option<&[f64]> {
        match self {
            BuiltinG::Zero { .. } => None,
            BuiltinG::Linear { c, .. } if c.is_empty() => None,
            BuiltinG::Constant { c }
            | BuiltinG::Linear { c, .. }
            | BuiltinG::Cubic { c, .. }
            | BuiltinG::ProjectedCubic { c, .. }
            | BuiltinG::Arctan { c, .. } => Some(c),
        }
    }

    /// Whether the map is affine in `u`.
    pub fn is_affine(&self) -> bool {
        match self {
            BuiltinG::Zero { .. } | BuiltinG::Constant { .. } | BuiltinG::Linear { .. } => true,
            BuiltinG::Cubic { scale, .. }
            | BuiltinG::ProjectedCubic { scale, .. }
            | BuiltinG::Arctan { scale, .. } => *scale == 0.0,
        }
    }
}

impl Nonlinearity for BuiltinG {
    fn dim(&self) -> usize {
        match self {
            BuiltinG::Zero { dim } => *dim,
            BuiltinG::Linear { b, .. } => b.len(),
            BuiltinG::Constant { c }
            | BuiltinG::Cubic { c, .. }
            | BuiltinG::ProjectedCubic { c, .. }
            | BuiltinG::Arctan { c, .. } => c.len(),
        }
    }

    fn eval(&self, u: &VectorH) -> VectorH {
        let x = u.as_slice();
        let mut out: Vec<f64> = match self {
            BuiltinG::Zero { dim } => vec![0.0; *dim],
            BuiltinG::Constant { c } => vec![0.0; c.len()],
            BuiltinG::Linear { b, .. } => b.iter().map(|row| dot(row, x)).collect(),
            BuiltinG::Cubic { scale, .. } => x.iter().map(|xi| scale * xi * xi * xi).collect(),
            BuiltinG::Arctan { scale, .. } => x.iter().map(|xi| scale * xi.atan()).collect(),
            BuiltinG::ProjectedCubic { scale, basis, .. } => {
                let mut out = vec![0.0; x.len()];
                for row in basis {
                    let y = dot(row, x);
                    let w = scale * y * y * y;
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += w * r;
                    }
                }
                out
            }
        };
        if let Some(c) = self.offset() {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci;
            }
        }
        VectorH::from_vec(out)
    }

    fn jacobian(&self, u: &VectorH) -> DenseOperator {
        let x = u.as_slice();
        let n = x.len();
        match self {
            BuiltinG::Zero { .. } | BuiltinG::Constant { .. } => DenseOperator::zeros(n),
            BuiltinG::Linear { b, .. } => {
                DenseOperator::from_parts(n, b.iter().flatten().copied().collect())
            }
            BuiltinG::Cubic { scale, .. } => {
                DenseOperator::diag(&x.iter().map(|xi| 3.0 * scale * xi * xi).collect::<Vec<_>>())
            }
            BuiltinG::Arctan { scale, .. } => DenseOperator::diag(
                &x.iter()
                    .map(|xi| scale / (1.0 + xi * xi))
                    .collect::<Vec<_>>(),
            ),
            BuiltinG::ProjectedCubic { scale, basis, .. } => {
                let mut data = vec![0.0; n * n];
                for row in basis {
                    let y = dot(row, x);
                    let w = 3.0 * scale * y * y;
                    for i in 0..n {
                        let wi = w * row[i];
                        if wi == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            data[i * n + j] += wi * row[j];
                        }
                    }
                }
                DenseOperator::from_parts(n, data)
            }
        }
    }
}

/// Bounds on `‖g‖`, `‖g′‖`, `‖g″‖` over the locality ball.
///
/// Carried for reporting; none of the solvers consume them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GBounds {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

/// The nonlinear part `g` of the equation `Lv + g(v) = 0`.
#[derive(Clone, Debug)]
pub struct NonlinearMap {
    map: Arc<dyn Nonlinearity>,
    builtin: Option<BuiltinG>,
    pub bounds: Option<GBounds>,
    pub monotone_claimed: bool,
}

impl NonlinearMap {
    pub fn builtin(g: BuiltinG) -> Result<Self> {
        g.validate()?;
        Ok(NonlinearMap {
            map: Arc::new(g.clone()),
            builtin: Some(g),
            bounds: None,
            monotone_claimed: false,
        })
    }

    /// Wraps a user-supplied map. Such problems cannot be written back to a
    /// problem file.
    pub fn custom(map: Arc<dyn Nonlinearity>) -> Self {
        NonlinearMap {
            map,
            builtin: None,
            bounds: None,
            monotone_claimed: false,
        }
    }

    pub fn with_monotone_claim(mut self, claimed: bool) -> Self {
        self.monotone_claimed = claimed;
        self
    }

    pub fn as_builtin(&self) -> Option<&BuiltinG> {
        self.builtin.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn eval(&self, u: &VectorH) -> VectorH {
        self.map.eval(u)
    }

    pub fn jacobian(&self, u: &VectorH) -> DenseOperator {
        self.map.jacobian(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projected_cubic_matches_definition() {
        let g = BuiltinG::ProjectedCubic {
            scale: 2.0,
            basis: vec![vec![0.6, 0.8]],
            c: vec![1.0, -1.0],
        };
        let u = VectorH::new(vec![1.0, 1.0]).unwrap();
        // P u = 1.4, 2 * 1.4^3 = 5.488
        let gu = g.eval(&u);
        assert!((gu[0] - (1.0 + 5.488 * 0.6)).abs() < 1e-12);
        assert!((gu[1] - (-1.0 + 5.488 * 0.8)).abs() < 1e-12);
        let j = g.jacobian(&u);
        assert!((j.get(0, 1) - 3.0 * 2.0 * 1.96 * 0.48).abs() < 1e-12);
    }

    #[test]
    fn serde_shape() {
        let g: BuiltinG =
            serde_json::from_str(r#"{"builtin":"cubic","params":{"scale":1.0,"c":[3.0]}}"#)
                .unwrap();
        assert_eq!(
            g,
            BuiltinG::Cubic {
                scale: 1.0,
                c: vec![3.0]
            }
        );
        let bad = serde_json::from_str::<BuiltinG>(r#"{"builtin":"quartic","params":{}}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn validate_catches_shape_errors() {
        let g = BuiltinG::Linear {
            b: vec![vec![1.0, 0.0], vec![0.0]],
            c: vec![],
        };
        assert!(g.validate().is_err());
    }
}
