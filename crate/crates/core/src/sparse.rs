//! Compressed-row sparse matrices and banded tridiagonal solvers.
//!
//! The pipe models only ever produce tridiagonal or bidiagonal operators, so
//! the heavy lifting is done by the Thomas algorithm on [`Tridiagonal`]. The
//! general [`SparseMatrix`] is the storage and exchange type.

use std::io::Write;

use nalgebra::{ComplexField, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)))
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &entries {
            assert!(
                i < nrows && j < ncols,
                "triplet ({i}, {j}) outside {nrows}x{ncols}"
            );
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries (explicit zeros included).
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[row.clone()].binary_search(&j) {
            Ok(k) => self.values[row.start + k],
            Err(_) => 0.0,
        }
    }

    /// Stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    /// `y += alpha * self * x`
    pub fn mul_vec_acc(&self, alpha: f64, x: &DVector<f64>, y: &mut DVector<f64>) {
        for i in 0..self.nrows {
            let s: f64 = self.row(i).map(|(j, v)| v * x[j]).sum();
            y[i] += alpha * s;
        }
    }

    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for (i, j, v) in self.triplets() {
            for c in 0..m.ncols() {
                out[(i, c)] += v * m[(j, c)];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(i, j, v)| (j, i, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Linear combination `sum_k weights[k] * terms[k]` of equally shaped matrices.
    pub fn linear_combination(weights: &[f64], terms: &[&SparseMatrix]) -> Self {
        assert_eq!(weights.len(), terms.len());
        assert!(!terms.is_empty());
        let (nrows, ncols) = (terms[0].nrows, terms[0].ncols);
        let mut dense = DMatrix::<f64>::zeros(nrows, ncols);
        let mut pattern = std::collections::BTreeSet::new();
        for (w, t) in weights.iter().zip(terms) {
            assert_eq!((t.nrows, t.ncols), (nrows, ncols));
            for (i, j, v) in t.triplets() {
                dense[(i, j)] += w * v;
                pattern.insert((i, j));
            }
        }
        Self::from_triplets(nrows, ncols, pattern.into_iter().map(|(i, j)| (i, j, dense[(i, j)])))
    }

    /// Writes one `row col value` line per stored entry (0-based indices).
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Tridiagonal matrix in band storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    /// Sub-diagonal, `lower[i]` sits at `(i + 1, i)`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// Super-diagonal, `upper[i]` sits at `(i, i + 1)`.
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Extracts the band of a square sparse matrix; fails if anything lies outside it.
    pub fn from_sparse(m: &SparseMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                what: "tridiagonal matrix must be square",
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let mut t = Self::zeros(m.nrows());
        for (i, j, v) in m.triplets() {
            if i == j {
                t.diag[i] += v;
            } else if i == j + 1 {
                t.lower[j] += v;
            } else if j == i + 1 {
                t.upper[i] += v;
            } else if v != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i}, {j}) lies outside the tridiagonal band"
                )));
            }
        }
        Ok(t)
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &Tridiagonal) -> Tridiagonal {
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect();
        Tridiagonal {
            lower: comb(&self.lower, &other.lower),
            diag: comb(&self.diag, &other.diag),
            upper: comb(&self.upper, &other.upper),
        }
    }

    pub fn transpose(&self) -> Tridiagonal {
        Tridiagonal {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.len();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Factorizes `alpha * self + shift * I`; the shift may be complex.
    pub fn factor_shifted<T>(&self, alpha: f64, shift: T) -> Result<TridiagonalLu<T>>
    where
        T: ComplexField<RealField = f64> + Copy,
    {
        let n = self.len();
        let d: Vec<T> = self.diag.iter().map(|&v| T::from_real(alpha * v) + shift).collect();
        let l: Vec<T> = self.lower.iter().map(|&v| T::from_real(alpha * v)).collect();
        let u: Vec<T> = self.upper.iter().map(|&v| T::from_real(alpha * v)).collect();
        TridiagonalLu::factor(n, &l, &d, &u)
    }
}

/// LU factors of a tridiagonal matrix (Thomas algorithm, no pivoting).
#[derive(Debug, Clone)]
pub struct TridiagonalLu<T> {
    lower: Vec<T>,
    pivots: Vec<T>,
    upper: Vec<T>,
}

impl<T> TridiagonalLu<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    pub fn factor(n: usize, lower: &[T], diag: &[T], upper: &[T]) -> Result<Self> {
        let scale = diag
            .iter()
            .chain(lower)
            .chain(upper)
            .map(|v| v.modulus())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut pivots = Vec::with_capacity(n);
        let mut mult = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut p = diag[i];
            if i > 0 {
                let m = lower[i - 1] / pivots[i - 1];
                p -= m * upper[i - 1];
                mult.push(m);
            }
            if p.modulus() <= 1e-14 * scale {
                return Err(Error::Singular(format!("zero pivot at row {i} of tridiagonal system")));
            }
            pivots.push(p);
        }
        Ok(Self {
            lower: mult,
            pivots,
            upper: upper.to_vec(),
        })
    }

    pub fn solve_in_place(&self, rhs: &mut [T]) {
        let n = self.pivots.len();
        assert_eq!(rhs.len(), n);
        for i in 1..n {
            let m = self.lower[i - 1];
            let prev = rhs[i - 1];
            rhs[i] -= m * prev;
        }
        for i in (0..n).rev() {
            if i + 1 < n {
                let next = rhs[i + 1];
                rhs[i] -= self.upper[i] * next;
            }
            rhs[i] /= self.pivots[i];
        }
    }
}
