use super::{DenseOperator, OperatorFlags, VectorH};

const MAX_SWEEPS: usize = 100;

/// Spectrum of a symmetric operator: ascending eigenvalues and the matching
/// orthonormal eigenvectors stored as columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseOperator,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> VectorH {
        self.vectors.column(k)
    }

    /// `Q Λ Qᵀ`
    pub fn reconstruct(&self) -> DenseOperator {
        let n = self.values.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = (0..n)
                    .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                    .sum();
            }
        }
        DenseOperator::from_parts(n, data)
    }
}

/// Cyclic Jacobi rotations on a copy of `a`. The caller has checked symmetry;
/// only the upper triangle is trusted, the lower one is mirrored first.
pub(super) fn jacobi_eigen(a: &DenseOperator) -> SymmetricEigen {
    let n = a.dim();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            m[i * n + j] = a.get(i, j);
            m[j * n + i] = a.get(i, j);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-2 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let mut q = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            q[i * n + new] = v[i * n + old];
        }
    }
    SymmetricEigen {
        values,
        vectors: DenseOperator::from_parts(n, q).with_trusted_flags(OperatorFlags::default()),
    }
}
