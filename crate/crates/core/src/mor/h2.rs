//! Bilinear iterative rational Krylov iteration for the Petrov-Galerkin
//! bases `V`, `W`.
//!
//! The linear part is expanded around a reference velocity,
//! `A* = A(p*) + v_ref Q1`, so the bilinear term only carries the velocity
//! deviation. Each sweep eigendecomposes the reduced `A`, solves the two
//! generalized Sylvester equations column by column on shifted tridiagonal
//! systems and orthonormalizes the real solutions.

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::{condition_number, eig, orthonormalize, sorted_eigenvalues, to_complex, CMatrix};
use super::factors::ParametricFactors;
use crate::error::{Error, Result};
use crate::fom::{BilinearFom, ThermalParameters, INPUT_DIM};
use crate::sparse::{Tridiagonal, TridiagonalLu};

#[derive(Debug, Clone)]
pub struct ReductionConfig {
    pub order: usize,
    /// Relative change of the sorted reduced spectrum that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Velocity folded into the linear part.
    pub reference_velocity: f64,
    /// Initial weight of the bilinear coupling; halved while the inner fixed
    /// point diverges.
    pub bilinear_scaling: f64,
    /// Relative weights of the input channels `(v, T_in, v T_in, T_amb)`.
    pub input_weights: [f64; INPUT_DIM],
    /// Spend one basis direction on exact interpolation at `s = 0`, so the
    /// reduced model reproduces the steady-state gain at the reference point.
    pub pin_steady_state: bool,
    pub max_restarts: usize,
    pub seed: u64,
}

impl ReductionConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            tol: 1e-6,
            max_iter: 100,
            reference_velocity: 0.0,
            bilinear_scaling: 1.0,
            input_weights: [1.0; INPUT_DIM],
            pin_steady_state: true,
            max_restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub reference: ThermalParameters,
    pub reference_velocity: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Last relative spectral change; infinite if no two iterates were compared.
    pub eigenvalue_change: f64,
    pub condition: f64,
    pub bilinear_scaling: f64,
    pub restarts: usize,
    pub reduced_eigenvalues: Vec<Complex64>,
}

impl ProjectionBasis {
    pub fn identity(n: usize, reference: ThermalParameters) -> Self {
        Self::from_bases(DMatrix::identity(n, n), DMatrix::identity(n, n), reference)
    }

    /// Wraps externally computed bases.
    pub fn from_bases(v: DMatrix<f64>, w: DMatrix<f64>, reference: ThermalParameters) -> Self {
        let condition = condition_number(&(w.transpose() * &v));
        Self {
            v,
            w,
            reference,
            reference_velocity: 0.0,
            converged: true,
            iterations: 0,
            eigenvalue_change: 0.0,
            condition,
            bilinear_scaling: 0.0,
            restarts: 0,
            reduced_eigenvalues: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.v.ncols()
    }
}

fn tri_mul_dense(t: &Tridiagonal, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col = t.mul_vec(&x.column(j).into_owned());
        out.set_column(j, &col);
    }
    out
}

fn tri_mul_complex(t: &Tridiagonal, x: &[Complex64], out: &mut [Complex64]) {
    let n = x.len();
    for i in 0..n {
        let mut s = x[i] * t.diag[i];
        if i > 0 {
            s += x[i - 1] * t.lower[i - 1];
        }
        if i + 1 < n {
            s += x[i + 1] * t.upper[i];
        }
        out[i] = s;
    }
}

struct InnerDiverged;

/// Solves `A Y + Y diag(shifts) + gamma^2 sum_k N_k Y M_k = R0` column-wise,
/// with `R0` holding the already negated right-hand side.
fn solve_sylvester(
    factors: &[TridiagonalLu<Complex64>],
    rhs0: &CMatrix,
    bilinear: &[Tridiagonal],
    coupling: &[CMatrix],
    gamma: f64,
) -> std::result::Result<CMatrix, InnerDiverged> {
    let (n, r) = rhs0.shape();
    let solve_all = |rhs: &CMatrix| -> CMatrix {
        let mut y = rhs.clone();
        for (j, lu) in factors.iter().enumerate() {
            let col = y.column_mut(j);
            let slice = col.data.into_slice_mut();
            lu.solve_in_place(slice);
        }
        y
    };
    let mut y = solve_all(rhs0);
    if gamma == 0.0 || bilinear.is_empty() {
        return Ok(y);
    }
    let g2 = Complex64::from(gamma * gamma);
    let mut prev = f64::INFINITY;
    let mut slow = 0;
    let mut buf = vec![Complex64::default(); n];
    for _ in 0..200 {
        let mut rhs = rhs0.clone();
        for (nk, mk) in bilinear.iter().zip(coupling) {
            let ym = &y * mk;
            for j in 0..r {
                tri_mul_complex(nk, ym.column(j).as_slice(), &mut buf);
                for i in 0..n {
                    rhs[(i, j)] -= g2 * buf[i];
                }
            }
        }
        let next = solve_all(&rhs);
        let step = (&next - &y).norm() / next.norm().max(f64::MIN_POSITIVE);
        if !step.is_finite() {
            return Err(InnerDiverged);
        }
        y = next;
        if step < 1e-13 {
            return Ok(y);
        }
        if step > 0.9 * prev {
            slow += 1;
            if slow >= 3 {
                return Err(InnerDiverged);
            }
        } else {
            slow = 0;
        }
        prev = step;
    }
    Ok(y)
}

/// Largest relative distance from a new eigenvalue to the nearest old one.
/// Nearest-neighbour matching keeps conjugate pairs from being compared
/// crosswise when round-off reorders them.
fn spectral_change(new: &[Complex64], old: &[Complex64]) -> f64 {
    new.iter()
        .map(|a| {
            old.iter()
                .map(|b| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Eigenvectors of the symmetric `A(p*)` closest to the imaginary axis.
fn dominant_subspace(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut v = DMatrix::zeros(a.nrows(), r);
    for (k, &i) in order.iter().take(r).enumerate() {
        v.set_column(k, &eig.eigenvectors.column(i));
    }
    v
}

struct Iterate {
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    eigenvalues: Vec<Complex64>,
    condition: f64,
}

struct Outcome {
    best: Iterate,
    converged: bool,
    iterations: usize,
    change: f64,
    gamma: f64,
    restarts: usize,
}

/// Operators of the expanded system `(A*, N_k, B, C)`.
struct Expanded {
    a: Tridiagonal,
    a_t: Tridiagonal,
    bilinear: Vec<Tridiagonal>,
    bilinear_t: Vec<Tridiagonal>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    /// Symmetric `A(p*)`, source of the initial subspace.
    a_sym: DMatrix<f64>,
}

/// Projector `(W^T V)^-1 W^T` and the reduced spectrum, if the reduced
/// linear part is Hurwitz.
fn reduce_checked(sys: &Expanded, v: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<Complex64>, CMatrix, f64)> {
    let wt = w.transpose();
    let wtv = &wt * v;
    let condition = condition_number(&wtv);
    if !(condition < super::rom::MAX_PROJECTION_CONDITION) {
        return None;
    }
    let t = wtv.lu().solve(&wt)?;
    let a_hat = &t * tri_mul_dense(&sys.a, v);
    let (lambda, rvec) = eig(&a_hat).ok()?;
    lambda.iter().all(|l| l.re < 0.0).then_some((t, lambda, rvec, condition))
}

fn iterate(sys: &Expanded, r: usize, config: &ReductionConfig) -> Result<Outcome> {
    let n = sys.a.len();
    let v0 = dominant_subspace(&sys.a_sym, r);
    let mut v = v0.clone();
    let mut w = v0.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gamma = config.bilinear_scaling.max(0.0);
    let mut restarts = 0;
    let mut prev: Option<Vec<Complex64>> = None;
    let mut last_good: Option<Iterate> = None;
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let Some((t, lambda, rvec, condition)) = reduce_checked(sys, &v, &w) else {
            if restarts >= config.max_restarts {
                warn!("reduced iterate not Hurwitz after {restarts} restarts; keeping last stable iterate");
                break;
            }
            restarts += 1;
            gamma *= 0.5;
            debug!("restarting H2 iteration (restart {restarts}, coupling {gamma})");
            let noise = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
            let scale = 1e-3 * restarts as f64 / (n as f64).sqrt();
            v = orthonormalize(&(&v0 + noise * scale))?;
            w = v.clone();
            prev = None;
            continue;
        };

        let sorted = sorted_eigenvalues(&lambda);
        if let Some(p) = &prev {
            change = spectral_change(&sorted, p);
        }
        last_good = Some(Iterate {
            v: v.clone(),
            w: w.clone(),
            eigenvalues: sorted.clone(),
            condition,
        });
        debug!("H2 iteration {iterations}: change {change:.3e}, gamma {gamma}");
        if change < config.tol {
            converged = true;
            break;
        }
        prev = Some(sorted);

        let Some(rinv) = rvec.clone().try_inverse() else {
            warn!("defective reduced spectrum; keeping last stable iterate");
            break;
        };
        let n_hat: Vec<CMatrix> = sys
            .bilinear
            .iter()
            .map(|nk| to_complex(&(&t * tri_mul_dense(nk, &v))))
            .collect();
        let n_tilde: Vec<CMatrix> = n_hat.iter().map(|m| &rinv * m * &rvec).collect();
        let n_tilde_t: Vec<CMatrix> = n_tilde.iter().map(|m| m.transpose()).collect();
        let b_tilde = &rinv * to_complex(&(&t * &sys.b));
        let c_hat = &sys.c * &v;

        let shifted = |a: &Tridiagonal| -> Result<Vec<TridiagonalLu<Complex64>>> {
            lambda.iter().map(|l| a.factor_shifted(1.0, *l)).collect()
        };
        let fac = shifted(&sys.a)?;
        let fac_t = shifted(&sys.a_t)?;
        let reach_rhs = -(to_complex(&sys.b) * b_tilde.transpose());
        let obs_rhs = -(to_complex(&sys.c.transpose()) * to_complex(&c_hat) * &rvec);

        let (y, u) = loop {
            let y = solve_sylvester(&fac, &reach_rhs, &sys.bilinear, &n_tilde_t, gamma);
            let u = solve_sylvester(&fac_t, &obs_rhs, &sys.bilinear_t, &n_tilde, gamma);
            match (y, u) {
                (Ok(y), Ok(u)) => break (y, u),
                _ => {
                    gamma = if gamma < 1e-6 { 0.0 } else { 0.5 * gamma };
                    debug!("bilinear fixed point diverged; scaling coupling to {gamma}");
                }
            }
        };
        let x = (y * rvec.transpose()).map(|z| z.re);
        let z = (u * rinv).map(|z| z.re);
        match (orthonormalize(&x), orthonormalize(&z)) {
            (Ok(nv), Ok(nw)) => {
                v = nv;
                w = nw;
            }
            _ => {
                warn!("H2 iterate lost rank; keeping last stable iterate");
                break;
            }
        }
    }

    let Some(best) = last_good else {
        return Err(Error::Spectral(
            "no stable reduced iterate found by the H2 iteration".into(),
        ));
    };
    if !converged {
        warn!("H2 iteration stopped after {iterations} iterations with spectral change {change:.3e}");
    }
    Ok(Outcome {
        best,
        converged,
        iterations,
        change,
        gamma,
        restarts,
    })
}

/// Tangential interpolation directions at `s = 0` along the dominant
/// singular pair of the steady-state gain `-C A*^-1 B`.
fn steady_state_directions(sys: &Expanded) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let lu = sys.a.factor_shifted(1.0, 0.0)?;
    let lu_t = sys.a_t.factor_shifted(1.0, 0.0)?;
    let mut response = sys.b.clone();
    for mut col in response.column_iter_mut() {
        lu.solve_in_place(col.as_mut_slice());
    }
    let gain = &sys.c * &response;
    let svd = gain.svd(true, true);
    let k = svd.singular_values.imax();
    let left = svd.u.as_ref().expect("requested").column(k).into_owned();
    let right = svd.v_t.as_ref().expect("requested").row(k).transpose();
    let v = response * right;
    let mut w = sys.c.transpose() * left;
    lu_t.solve_in_place(w.as_mut_slice());
    Ok((DMatrix::from_column_slice(v.len(), 1, v.as_slice()), DMatrix::from_column_slice(w.len(), 1, w.as_slice())))
}

fn append_column(m: &DMatrix<f64>, col: &DMatrix<f64>) -> DMatrix<f64> {
    super::factors::hstack(&[m.clone(), col.clone()])
}

pub fn h2_reduce(
    factors: &ParametricFactors,
    p_star: &ThermalParameters,
    fom: &BilinearFom,
    config: &ReductionConfig,
) -> Result<ProjectionBasis> {
    p_star.validate()?;
    let n = factors.state_dim();
    let r = config.order;
    if fom.state_dim() != n {
        return Err(Error::DimensionMismatch {
            what: "full-order model size",
            expected: n,
            got: fom.state_dim(),
        });
    }
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(format!("reduced order {r} must lie in 1..={n}")));
    }
    if r == n {
        let mut basis = ProjectionBasis::identity(n, *p_star);
        basis.reference_velocity = config.reference_velocity;
        return Ok(basis);
    }

    let a_p = Tridiagonal::from_sparse(&factors.assemble_a(p_star))?;
    let bilinear: Vec<Tridiagonal> = fom
        .q
        .iter()
        .filter(|q| q.nnz() > 0)
        .map(Tridiagonal::from_sparse)
        .collect::<Result<_>>()?;
    let q1 = Tridiagonal::from_sparse(&fom.q[0])?;
    let a_star = a_p.axpy(config.reference_velocity, &q1);
    let mut b = factors.assemble_b(p_star).to_dense();
    for (k, wk) in config.input_weights.iter().enumerate() {
        b.column_mut(k).scale_mut(*wk);
    }
    let sys = Expanded {
        a_t: a_star.transpose(),
        a: a_star,
        bilinear_t: bilinear.iter().map(Tridiagonal::transpose).collect(),
        bilinear,
        b,
        c: fom.c.to_dense(),
        a_sym: factors.assemble_a(p_star).to_dense(),
    };

    let finish = |out: Outcome, v: DMatrix<f64>, w: DMatrix<f64>, eigenvalues: Vec<Complex64>, condition: f64| ProjectionBasis {
        v,
        w,
        reference: *p_star,
        reference_velocity: config.reference_velocity,
        converged: out.converged,
        iterations: out.iterations,
        eigenvalue_change: out.change,
        condition,
        bilinear_scaling: out.gamma,
        restarts: out.restarts,
        reduced_eigenvalues: eigenvalues,
    };

    if config.pin_steady_state && r >= 2 {
        let out = iterate(&sys, r - 1, config)?;
        let (dv, dw) = steady_state_directions(&sys)?;
        let v = orthonormalize(&append_column(&out.best.v, &dv));
        let w = orthonormalize(&append_column(&out.best.w, &dw));
        if let (Ok(v), Ok(w)) = (v, w) {
            if let Some((_, lambda, _, condition)) = reduce_checked(&sys, &v, &w) {
                return Ok(finish(out, v, w, sorted_eigenvalues(&lambda), condition));
            }
        }
        warn!("steady-state direction breaks the reduced iterate; using the plain H2 basis");
    }
    let out = iterate(&sys, r, config)?;
    let (v, w) = (out.best.v.clone(), out.best.w.clone());
    let (eig, cond) = (out.best.eigenvalues.clone(), out.best.condition);
    Ok(finish(out, v, w, eig, cond))
}
