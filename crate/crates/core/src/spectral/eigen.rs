//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sweeps allowed before giving up.
pub const MAX_SWEEPS: usize = 50;
/// Iteration stops once the off-diagonal Frobenius norm is below this
/// fraction of the matrix norm. Convergence is quadratic, so going this far
/// costs at most a sweep and makes the result a smooth function of the input
/// to rounding level.
pub const OFF_DIAGONAL_TOL: f64 = 1e-18;
/// Tolerance for the symmetry precondition.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix.
///
/// Columns of `vectors` are orthonormal eigenvectors, `lambdas` are sorted
/// non-increasing, and the first entry of each eigenvector with magnitude
/// above `1e-12` is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    vectors: Tensor,
    lambdas: Vec<f64>,
}

impl SpectralBasis {
    pub fn order(&self) -> usize {
        self.lambdas.len()
    }

    /// `[N, N]`, eigenvectors as columns.
    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Entry `i` of eigenvector `k`.
    pub fn u(&self, i: usize, k: usize) -> f64 {
        self.vectors.data()[i * self.order() + k]
    }

    /// `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> Tensor {
        let n = self.order();
        Tensor::from_fn(&[n, n], |ix| {
            (0..n).map(|k| self.u(ix[0], k) * self.lambdas[k] * self.u(ix[1], k)).sum()
        })
    }

    /// `max |U^T U - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.order();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| self.u(i, a) * self.u(i, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

fn check_symmetric(a: &Tensor) -> Result<usize> {
    let [n, m] = *a.shape() else {
        return Err(Error::contract(format!("eigh needs a square matrix, got {:?}", a.shape())));
    };
    if n != m {
        return Err(Error::contract(format!("eigh needs a square matrix, got {:?}", a.shape())));
    }
    let d = a.data();
    for i in 0..n {
        for j in 0..i {
            if !d[i * n + j].is_finite() {
                return Err(Error::Numeric(format!("non-finite entry at ({i}, {j})")));
            }
            if (d[i * n + j] - d[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(Error::contract(format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    d[i * n + j],
                    d[j * n + i]
                )));
            }
        }
    }
    Ok(n)
}

/// Eigendecomposition of a symmetric matrix.
pub fn eigh_sym(a: &Tensor) -> Result<SpectralBasis> {
    let n = check_symmetric(a)?;
    // symmetrize exactly so the rotations stay symmetric
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.data()[i * n + j] + a.data()[j * n + i]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        s.sqrt()
    };

    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * scale;
    let mut converged = off(&m) <= tol;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
                off(&m)
            )));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    let np = c * mkp - s * mkq;
                    let nq = s * mkp + c * mkq;
                    m[k * n + p] = np;
                    m[p * n + k] = np;
                    m[k * n + q] = nq;
                    m[q * n + k] = nq;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
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
        sweep += 1;
        converged = off(&m) <= tol;
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep rotation order
    order.sort_by(|&a, &b| m[b * n + b].total_cmp(&m[a * n + a]));
    let lambdas: Vec<f64> = order.iter().map(|&k| m[k * n + k]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    {
        let vd = vectors.data_mut();
        for (col, &k) in order.iter().enumerate() {
            let pivot = (0..n).map(|i| v[i * n + k]).find(|x| x.abs() > 1e-12).unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                vd[i * n + col] = sign * v[i * n + k];
            }
        }
    }
    Ok(SpectralBasis { vectors, lambdas })
}

/// Input adjoint from an eigenvalue adjoint: `U diag(g) U^T`.
pub(crate) fn eigenvalues_backward(u: &Tensor, g: &Tensor) -> Tensor {
    let n = g.len();
    let ud = u.data();
    Tensor::from_fn(&[n, n], |ix| {
        (0..n).map(|k| ud[ix[0] * n + k] * g.data()[k] * ud[ix[1] * n + k]).sum()
    })
}

/// Input adjoint from an eigenvector adjoint:
/// `U (F o (U^T G)) U^T`, symmetrized, with
/// `F_ij = (l_j - l_i) / ((l_j - l_i)^2 + eps)` off the diagonal.
pub(crate) fn eigenvectors_backward(u: &Tensor, lambdas: &[f64], g: &Tensor, eps: f64) -> Tensor {
    let n = lambdas.len();
    let ud = u.data();
    let gd = g.data();
    // inner = F o (U^T G)
    let mut inner = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let gap = lambdas[j] - lambdas[i];
            let f = gap / (gap * gap + eps);
            if f == 0.0 {
                continue;
            }
            let utg: f64 = (0..n).map(|k| ud[k * n + i] * gd[k * n + j]).sum();
            inner[i * n + j] = f * utg;
        }
    }
    // U inner U^T
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for j in 0..n {
            tmp[r * n + j] = (0..n).map(|i| ud[r * n + i] * inner[i * n + j]).sum();
        }
    }
    let mut out = Tensor::zeros(&[n, n]);
    let od = out.data_mut();
    for r in 0..n {
        for c in 0..n {
            od[r * n + c] = (0..n).map(|j| tmp[r * n + j] * ud[c * n + j]).sum();
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            let s = 0.5 * (od[r * n + c] + od[c * n + r]);
            od[r * n + c] = s;
            od[c * n + r] = s;
        }
    }
    out
}
