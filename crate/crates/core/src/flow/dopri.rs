//! Dormand–Prince 5(4) embedded pair with a PI step-size controller.

use crate::error::Result;
use crate::linalg::VectorH;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

/// One attempted step.
pub(super) struct Trial {
    pub y: VectorH,
    /// Derivative at the new point (first stage of the next step).
    pub dy: VectorH,
    /// Scaled RMS error estimate; the step is acceptable when `≤ 1`.
    pub err: f64,
}

/// Autonomous right-hand side `y' = f(y)`.
pub(super) trait Rhs {
    fn eval(&mut self, y: &VectorH) -> Result<VectorH>;
}

impl<F: FnMut(&VectorH) -> Result<VectorH>> Rhs for F {
    fn eval(&mut self, y: &VectorH) -> Result<VectorH> {
        self(y)
    }
}

pub(super) struct Controller {
    pub rel_tol: f64,
    pub abs_tol: f64,
    err_old: f64,
}

impl Controller {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Controller {
            rel_tol,
            abs_tol,
            err_old: 1e-4,
        }
    }

    fn scaled_norm(&self, e: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let n = e.len() as f64;
        let s: f64 = e
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(ei, (a, b))| {
                let sc = self.abs_tol + self.rel_tol * a.abs().max(b.abs());
                (ei / sc) * (ei / sc)
            })
            .sum();
        (s / n).sqrt()
    }

    /// Growth factor after an accepted step.
    pub fn accept(&mut self, err: f64) -> f64 {
        let err = err.max(1e-10);
        let fac = SAFETY * err.powf(-ALPHA) * self.err_old.powf(BETA);
        self.err_old = err.max(1e-4);
        fac.clamp(MIN_FACTOR, MAX_FACTOR)
    }

    /// Shrink factor after a rejected step.
    pub fn reject(&self, err: f64) -> f64 {
        (SAFETY * err.powf(-ALPHA)).clamp(MIN_FACTOR, 1.0)
    }

    /// Starting step size from the local derivative scales.
    pub fn initial_step(&self, rhs: &mut impl Rhs, y: &VectorH, dy: &VectorH) -> Result<f64> {
        let zero = vec![0.0; y.dim()];
        let d0 = self.scaled_norm(y.as_slice(), &zero, y.as_slice()).max(0.0);
        let d1 = self.scaled_norm(dy.as_slice(), y.as_slice(), y.as_slice());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let mut y1 = y.clone();
        y1.axpy(h0, dy);
        let dy1 = rhs.eval(&y1)?;
        let diff = &dy1 - dy;
        let d2 = self.scaled_norm(diff.as_slice(), y.as_slice(), y.as_slice()) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1))
    }

    /// Attempts a step of size `h` from `y`, given `dy = f(y)`.
    pub fn step(&self, rhs: &mut impl Rhs, y: &VectorH, dy: &VectorH, h: f64) -> Result<Trial> {
        let mut k: Vec<VectorH> = Vec::with_capacity(7);
        k.push(dy.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    ys.axpy(h * a, kj);
                }
            }
            debug_assert!(C[s] > 0.0);
            if s == 6 {
                // the last stage is evaluated at the fifth-order solution
                let ks = rhs.eval(&ys)?;
                let mut e = vec![0.0; y.dim()];
                for (j, kj) in k.iter().chain(std::iter::once(&ks)).enumerate() {
                    for (ei, kji) in e.iter_mut().zip(kj.as_slice()) {
                        *ei += h * E[j] * kji;
                    }
                }
                let err = self.scaled_norm(&e, y.as_slice(), ys.as_slice());
                return Ok(Trial { y: ys, dy: ks, err });
            }
            k.push(rhs.eval(&ys)?);
        }
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fifth_order() {
        // y' = -y, one step of size h; local error should scale like h^6
        let ctl = Controller::new(1e-8, 1e-12);
        let y = VectorH::new(vec![1.0]).unwrap();
        let err_at = |h: f64| {
            let mut rhs = |y: &VectorH| -> Result<VectorH> { Ok(y.scaled(-1.0)) };
            let t = ctl.step(&mut rhs, &y, &y.scaled(-1.0), h).unwrap();
            (t.y[0] - (-h).exp()).abs()
        };
        let e1 = err_at(0.2);
        let e2 = err_at(0.1);
        let order = (e1 / e2).log2();
        assert!(order > 5.5 && order < 6.5, "observed local order {order}");
    }
}
