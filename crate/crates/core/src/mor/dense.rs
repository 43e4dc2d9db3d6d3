//! Dense helpers for the reduction code: complex eigendecomposition of small
//! matrices, thin orthonormalization and a Schur-based Lyapunov solver.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(Complex64::from)
}

/// Eigenvalues and right eigenvectors `A R = R diag(lambda)` of a small real matrix.
pub fn eig(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, CMatrix)> {
    let n = a.nrows();
    let schur = Schur::try_new(to_complex(a), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Spectral("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let scale = t.iter().map(|v| v.norm()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut y = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let lk = t[(k, k)];
        values.push(lk);
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                s += t[(j, l)] * y[(l, k)];
            }
            let mut d = t[(j, j)] - lk;
            if d.norm() < 1e-14 * scale {
                d = Complex64::new(1e-14 * scale, 0.0);
            }
            y[(j, k)] = -s / d;
        }
    }
    let mut r = q * y;
    for k in 0..n {
        let norm = r.column(k).norm();
        if norm > 0.0 {
            r.column_mut(k).unscale_mut(norm);
        }
    }
    Ok((values, r))
}

pub fn sorted_eigenvalues(values: &[Complex64]) -> Vec<Complex64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

/// Orthonormal basis of the column span (thin Householder QR).
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.ncols();
    let qr = m.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-13 * scale) {
        return Err(Error::Projection {
            condition: f64::INFINITY,
        });
    }
    Ok(qr.q().columns(0, k).into_owned())
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solver for `A X + X A^T + F = 0` reusing one complex Schur form of `A`.
pub struct LyapunovSolver {
    u: CMatrix,
    t: CMatrix,
}

impl LyapunovSolver {
    /// Fails if the Schur iteration stalls or `A` is not Hurwitz.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let schur = Schur::try_new(to_complex(a), f64::EPSILON, 100_000)
            .ok_or_else(|| Error::Spectral("Schur iteration did not converge".into()))?;
        let (u, t) = schur.unpack();
        if let Some(bad) = t.diagonal().iter().find(|l| l.re >= 0.0) {
            return Err(Error::Spectral(format!(
                "matrix is not Hurwitz: eigenvalue {:.4e}{:+.4e}i",
                bad.re, bad.im
            )));
        }
        Ok(Self { u, t })
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.t.diagonal().iter().copied().collect()
    }

    pub fn solve(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.t.nrows();
        let g = -(self.u.adjoint() * to_complex(f) * &self.u);
        let mut y = CMatrix::zeros(n, n);
        // T Y + Y T^H = G, columns from the last one down
        for j in (0..n).rev() {
            let mut rhs = g.column(j).into_owned();
            for k in j + 1..n {
                let c = self.t[(j, k)].conj();
                rhs.axpy(-c, &y.column(k), Complex64::new(1.0, 0.0));
            }
            let shift = self.t[(j, j)].conj();
            for i in (0..n).rev() {
                let mut s = rhs[i];
                for l in i + 1..n {
                    s -= self.t[(i, l)] * y[(l, j)];
                }
                y[(i, j)] = s / (self.t[(i, i)] + shift);
            }
        }
        let x = &self.u * y * self.u.adjoint();
        let re = x.map(|v| v.re);
        (&re + re.transpose()) * 0.5
    }
}
