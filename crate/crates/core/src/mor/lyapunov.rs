//! Generalized Lyapunov equations of bilinear systems,
//! `A P + P A^T + sum_i Q_i P Q_i^T + F F^T = 0`, solved by a stationary
//! fixed point over dense Schur-based Lyapunov solves.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::dense::LyapunovSolver;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramianKind {
    Reachability,
    Observability,
}

#[derive(Debug, Clone)]
pub struct LyapunovOptions {
    /// Relative Frobenius residual target.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gramian {
    pub p: DMatrix<f64>,
    pub kind: GramianKind,
    pub iterations: usize,
    /// Relative Frobenius residual of the returned solution.
    pub residual: f64,
}

impl Gramian {
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.p.clone()).eigenvalues.min()
    }
}

/// Residual `A P + P A^T + sum Q P Q^T + RHS` for the reachability pattern.
pub fn lyapunov_residual(a: &DMatrix<f64>, q: &[DMatrix<f64>], rhs: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = a * p + p * a.transpose() + rhs;
    for qi in q {
        r += qi * p * qi.transpose();
    }
    r
}

/// For reachability the right-hand side is `F F^T`; for observability it is
/// `F^T F` and the equation is transposed (`A^T P + P A + sum Q^T P Q`).
pub fn solve_generalized_lyapunov(
    a: &DMatrix<f64>,
    q: &[DMatrix<f64>],
    rhs_factor: &DMatrix<f64>,
    kind: GramianKind,
    opts: &LyapunovOptions,
) -> Result<Gramian> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov state matrix must be square",
            expected: n,
            got: a.ncols(),
        });
    }
    let (a, q, rhs) = match kind {
        GramianKind::Reachability => (a.clone(), q.to_vec(), rhs_factor * rhs_factor.transpose()),
        GramianKind::Observability => (
            a.transpose(),
            q.iter().map(|m| m.transpose()).collect::<Vec<_>>(),
            rhs_factor.transpose() * rhs_factor,
        ),
    };
    if rhs.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov right-hand side",
            expected: n,
            got: rhs.nrows(),
        });
    }
    let q: Vec<_> = q.into_iter().filter(|m| m.iter().any(|&v| v != 0.0)).collect();
    let solver = LyapunovSolver::new(&a)?;
    let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);

    let mut p = solver.solve(&rhs);
    let mut prev_step = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=opts.max_iter {
        let residual = lyapunov_residual(&a, &q, &rhs, &p).norm() / rhs_norm;
        if !residual.is_finite() {
            return Err(Error::Convergence { iterations: it, residual });
        }
        if residual <= opts.tol || q.is_empty() {
            return Ok(Gramian {
                p,
                kind,
                iterations: it,
                residual,
            });
        }
        let mut f = rhs.clone();
        for qi in &q {
            f += qi * &p * qi.transpose();
        }
        let next = solver.solve(&f);
        let step = (&next - &p).norm();
        if step <= 1e-14 * next.norm() {
            // stalled at round-off
            let residual = lyapunov_residual(&a, &q, &rhs, &next).norm() / rhs_norm;
            return Ok(Gramian {
                p: next,
                kind,
                iterations: it,
                residual,
            });
        }
        // contraction factor of the fixed point estimated from successive steps
        if step >= 0.95 * prev_step {
            growth += 1;
            if growth >= 3 {
                return Err(Error::Convergence { iterations: it, residual });
            }
        } else {
            growth = 0;
        }
        prev_step = step;
        p = next;
    }
    let residual = lyapunov_residual(&a, &q, &rhs, &p).norm() / rhs_norm;
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}
