//! Affine parameter decomposition of the pipe matrices.
//!
//! `A(p) = g1 A1 + g2 A2` with `g(p) = (lambda, D/dz^2)` and
//! `B(p) = h1 B1 + h2 B2 + h3 B3` with `h(p) = (lambda, D/dz^2, 1/dz)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fom::{Grid, ThermalParameters, INPUT_DIM};
use crate::sparse::SparseMatrix;

/// Number of terms in the state-matrix expansion.
pub const A_TERMS: usize = 2;
/// Number of terms in the input-matrix expansion.
pub const B_TERMS: usize = 3;

/// Identifiers written into persisted models.
pub const G_MAP_ID: &str = "lambda,diffusion/dz^2";
pub const H_MAP_ID: &str = "lambda,diffusion/dz^2,1/dz";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterMaps {
    pub dz: f64,
}

impl ParameterMaps {
    pub fn g(&self, p: &ThermalParameters) -> [f64; A_TERMS] {
        [p.lambda, p.beta(self.dz)]
    }

    pub fn h(&self, p: &ThermalParameters) -> [f64; B_TERMS] {
        [p.lambda, p.beta(self.dz), 1.0 / self.dz]
    }
}

#[derive(Debug, Clone)]
pub struct ParametricFactors {
    pub a: [SparseMatrix; A_TERMS],
    pub b: [SparseMatrix; B_TERMS],
    pub maps: ParameterMaps,
}

pub fn decouple_parameters(grid: &Grid) -> ParametricFactors {
    let n = grid.points;
    let a1 = SparseMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, -1.0)));
    let mut a2 = Vec::with_capacity(3 * n);
    for i in 0..n {
        a2.push((i, i, if i + 1 < n { -2.0 } else { -1.0 }));
        if i + 1 < n {
            a2.push((i, i + 1, 1.0));
        }
        if i > 0 {
            a2.push((i, i - 1, 1.0));
        }
    }
    let a2 = SparseMatrix::from_triplets(n, n, a2);
    let b1 = SparseMatrix::from_triplets(n, INPUT_DIM, (0..n).map(|i| (i, 3, 1.0)));
    let b2 = SparseMatrix::from_triplets(n, INPUT_DIM, [(0, 1, 1.0)]);
    let b3 = SparseMatrix::from_triplets(n, INPUT_DIM, [(0, 2, 1.0)]);
    ParametricFactors {
        a: [a1, a2],
        b: [b1, b2, b3],
        maps: ParameterMaps { dz: grid.dz },
    }
}

impl ParametricFactors {
    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn assemble_a(&self, p: &ThermalParameters) -> SparseMatrix {
        let [a1, a2] = &self.a;
        SparseMatrix::linear_combination(&self.maps.g(p), &[a1, a2])
    }

    pub fn assemble_b(&self, p: &ThermalParameters) -> SparseMatrix {
        let [b1, b2, b3] = &self.b;
        SparseMatrix::linear_combination(&self.maps.h(p), &[b1, b2, b3])
    }

    /// `[A1, A2]` side by side (N x 2N).
    pub fn a_matricized(&self) -> DMatrix<f64> {
        hstack(&self.a.iter().map(SparseMatrix::to_dense).collect::<Vec<_>>())
    }

    /// `[B1, B2, B3]` side by side (N x 12).
    pub fn b_matricized(&self) -> DMatrix<f64> {
        hstack(&self.b.iter().map(SparseMatrix::to_dense).collect::<Vec<_>>())
    }
}

pub(crate) fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}
