//! Full-order bilinear model of the water temperature along a single pipe.
//!
//! The advection-diffusion-relaxation equation
//!
//! ```text
//! dT/dt + v dT/dz = -lambda (T - T_amb) + D d2T/dz2,   T(0) = T_in,  dT/dz(L) = 0
//! ```
//!
//! is semi-discretized on `N` uniform cells (first-order upwind convection,
//! central diffusion). The inlet value is eliminated through a ghost point,
//! which turns the boundary constraint into the extra input `v * T_in` and
//! leaves a bilinear system
//!
//! ```text
//! x' = A(p) x + sum_i Q_i u_i x + B(p) u,    y = C x,
//! u  = (v, T_in, v * T_in, T_amb).
//! ```

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, Tridiagonal, TridiagonalLu};

/// Number of entries in the input vector `u`.
pub const INPUT_DIM: usize = 4;

/// Velocities below this are treated as reversed flow and rejected.
pub const REVERSE_FLOW_TOLERANCE: f64 = 1e-9;

/// Uniform axial grid; state `i` (0-based) sits at `z = (i + 1) * dz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub length: f64,
    pub points: usize,
    pub dz: f64,
}

/// Builds the uniform grid with `dz = length / points`.
pub fn build_grid(length: f64, points: usize) -> Result<Grid> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidGeometry(format!("pipe length must be positive, got {length}")));
    }
    if points < 2 {
        return Err(Error::InvalidGeometry(format!("need at least 2 grid points, got {points}")));
    }
    Ok(Grid {
        length,
        points,
        dz: length / points as f64,
    })
}

/// Pipe geometry: axial grid plus the flow cross section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeGeometry {
    pub grid: Grid,
    pub inner_diameter: f64,
    pub cross_section: f64,
}

impl PipeGeometry {
    /// Circular pipe, `a = pi d^2 / 4`.
    pub fn circular(length: f64, inner_diameter: f64, points: usize) -> Result<Self> {
        let a = std::f64::consts::PI * inner_diameter * inner_diameter / 4.0;
        Self::new(length, inner_diameter, a, points)
    }

    pub fn new(length: f64, inner_diameter: f64, cross_section: f64, points: usize) -> Result<Self> {
        let grid = build_grid(length, points)?;
        if !(inner_diameter.is_finite() && inner_diameter > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "inner diameter must be positive, got {inner_diameter}"
            )));
        }
        if !(cross_section.is_finite() && cross_section > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "cross section must be positive, got {cross_section}"
            )));
        }
        Ok(Self {
            grid,
            inner_diameter,
            cross_section,
        })
    }

    pub fn length(&self) -> f64 {
        self.grid.length
    }
}

/// Effective heat-transfer coefficient `lambda` (1/s) and axial diffusion `D` (m^2/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParameters {
    pub lambda: f64,
    pub diffusion: f64,
}

impl ThermalParameters {
    pub fn new(lambda: f64, diffusion: f64) -> Result<Self> {
        let p = Self { lambda, diffusion };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "diffusion must be >= 0, got {}",
                self.diffusion
            )));
        }
        Ok(())
    }

    /// `beta = D / dz^2`, the diffusion stencil weight.
    pub fn beta(&self, dz: f64) -> f64 {
        self.diffusion / (dz * dz)
    }
}

/// Boundary and transport inputs of one pipe for one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalInputs {
    pub velocity: f64,
    pub inlet_temperature: f64,
    pub ambient_temperature: f64,
}

impl ThermalInputs {
    pub fn new(velocity: f64, inlet_temperature: f64, ambient_temperature: f64) -> Self {
        Self {
            velocity,
            inlet_temperature,
            ambient_temperature,
        }
    }

    /// `u = (v, T_in, v * T_in, T_amb)`
    pub fn to_vector(&self) -> [f64; INPUT_DIM] {
        [
            self.velocity,
            self.inlet_temperature,
            self.velocity * self.inlet_temperature,
            self.ambient_temperature,
        ]
    }

    pub fn check(&self) -> Result<()> {
        if self.velocity < -REVERSE_FLOW_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "negative velocity {} m/s: flow reversal is not supported",
                self.velocity
            )));
        }
        if !(self.velocity.is_finite()
            && self.inlet_temperature.is_finite()
            && self.ambient_temperature.is_finite())
        {
            return Err(Error::InvalidParameter("non-finite thermal input".into()));
        }
        Ok(())
    }
}

/// Axial sensor positions (m). The outlet is always appended as the last output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub positions: Vec<f64>,
}

impl SensorLayout {
    pub fn new(positions: Vec<f64>) -> Self {
        Self { positions }
    }

    pub fn outlet_only() -> Self {
        Self::default()
    }

    /// Grid rows selected by each output, outlet last.
    ///
    /// A sensor at `z` maps to the cell `j` with `j dz < z <= (j + 1) dz`.
    pub fn indices(&self, grid: &Grid) -> Result<Vec<usize>> {
        let n = grid.points;
        let mut out = Vec::with_capacity(self.positions.len() + 1);
        for &z in &self.positions {
            if !(z.is_finite() && (0.0..=grid.length * (1.0 + 1e-12)).contains(&z)) {
                return Err(Error::InvalidGeometry(format!(
                    "sensor position {z} outside [0, {}]",
                    grid.length
                )));
            }
            let s = z / grid.length * n as f64;
            let snapped = if (s - s.round()).abs() < 1e-9 { s.round() } else { s };
            let j = (snapped.ceil() as usize).saturating_sub(1).min(n - 1);
            out.push(j);
        }
        if out.last() != Some(&(n - 1)) {
            out.push(n - 1);
        }
        Ok(out)
    }
}

/// Assembled full-order model of one pipe.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearFom {
    pub grid: Grid,
    pub params: ThermalParameters,
    /// `N x N` state matrix.
    pub a: SparseMatrix,
    /// Frontal slices `Q_1 .. Q_4` of the bilinear tensor.
    pub q: Vec<SparseMatrix>,
    /// `N x 4` input matrix.
    pub b: SparseMatrix,
    /// `n_m x N` selector of the measured cells.
    pub c: SparseMatrix,
    pub sensor_indices: Vec<usize>,
}

/// Assembles `A`, `Q_i`, `B`, `C` of the semi-discretized pipe.
pub fn assemble_fom(grid: &Grid, params: &ThermalParameters, sensors: &SensorLayout) -> Result<BilinearFom> {
    params.validate()?;
    let n = grid.points;
    let dz = grid.dz;
    let lambda = params.lambda;
    let beta = params.beta(dz);
    let inv_dz = 1.0 / dz;

    let mut a = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i + 1 < n {
            a.push((i, i, -lambda - 2.0 * beta));
            a.push((i, i + 1, beta));
        } else {
            // zero-gradient outlet: the right ghost mirrors T_N
            a.push((i, i, -lambda - beta));
        }
        if i > 0 {
            a.push((i, i - 1, beta));
        }
    }
    let a = SparseMatrix::from_triplets(n, n, a);

    let mut q1 = Vec::with_capacity(2 * n);
    for i in 0..n {
        q1.push((i, i, -inv_dz));
        if i > 0 {
            q1.push((i, i - 1, inv_dz));
        }
    }
    let q = vec![
        SparseMatrix::from_triplets(n, n, q1),
        SparseMatrix::zeros(n, n),
        SparseMatrix::zeros(n, n),
        SparseMatrix::zeros(n, n),
    ];

    let mut b = vec![(0, 1, beta), (0, 2, inv_dz)];
    b.extend((0..n).map(|i| (i, 3, lambda)));
    let b = SparseMatrix::from_triplets(n, INPUT_DIM, b);

    let sensor_indices = sensors.indices(grid)?;
    let c = SparseMatrix::from_triplets(
        sensor_indices.len(),
        n,
        sensor_indices.iter().enumerate().map(|(row, &j)| (row, j, 1.0)),
    );

    Ok(BilinearFom {
        grid: *grid,
        params: *params,
        a,
        q,
        b,
        c,
        sensor_indices,
    })
}

impl BilinearFom {
    pub fn state_dim(&self) -> usize {
        self.grid.points
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `A x + sum_i Q_i u_i x + B u`
    pub fn rhs(&self, x: &DVector<f64>, u: &ThermalInputs) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let uv = u.to_vector();
        let mut dx = self.a.mul_vec(x);
        for (qi, &ui) in self.q.iter().zip(&uv) {
            if ui != 0.0 && qi.nnz() > 0 {
                qi.mul_vec_acc(ui, x, &mut dx);
            }
        }
        dx += self.b.mul_vec(&DVector::from_row_slice(&uv));
        Ok(dx)
    }

    /// Mode-1 matricization `[Q_1, .., Q_4]` of the bilinear tensor (`N x 4N`).
    pub fn q_matricized(&self) -> SparseMatrix {
        let n = self.state_dim();
        SparseMatrix::from_triplets(
            n,
            INPUT_DIM * n,
            self.q
                .iter()
                .enumerate()
                .flat_map(|(k, qk)| qk.triplets().map(move |(i, j, v)| (i, k * n + j, v))),
        )
    }

    /// `y = C x`; the last entry is the outlet temperature.
    pub fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok(self.c.mul_vec(x))
    }

    /// One trapezoidal step with the inputs held over `[t, t + dt]`.
    pub fn step(&self, x: &DVector<f64>, u: &ThermalInputs, dt: f64) -> Result<DVector<f64>> {
        FomIntegrator::new(self)?.step(x, u, dt)
    }

    /// Largest step for which the trapezoidal update stays monotone at velocity `v`.
    pub fn monotone_step_limit(&self, velocity: f64) -> f64 {
        let rate = self.params.lambda + 2.0 * self.params.beta(self.grid.dz) + velocity.max(0.0) / self.grid.dz;
        if rate > 0.0 {
            2.0 / rate
        } else {
            f64::INFINITY
        }
    }
}

/// Kronecker product `u ⊗ x`.
pub fn kron(u: &[f64], x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(u.len() * n, |k, _| u[k / n] * x[k % n])
}

/// Trapezoidal integrator for a [`BilinearFom`] that keeps the factorization
/// of the implicit operator while inputs and step size stay the same.
#[derive(Debug, Clone)]
pub struct FomIntegrator {
    a: Tridiagonal,
    q: Vec<Tridiagonal>,
    b: nalgebra::DMatrix<f64>,
    cache: Option<StepCache>,
}

#[derive(Debug, Clone)]
struct StepCache {
    key: [u64; INPUT_DIM + 1],
    explicit: Tridiagonal,
    lu: TridiagonalLu<f64>,
}

impl FomIntegrator {
    pub fn new(fom: &BilinearFom) -> Result<Self> {
        Ok(Self {
            a: Tridiagonal::from_sparse(&fom.a)?,
            q: fom.q.iter().map(Tridiagonal::from_sparse).collect::<Result<_>>()?,
            b: fom.b.to_dense(),
            cache: None,
        })
    }

    pub fn step(&mut self, x: &DVector<f64>, u: &ThermalInputs, dt: f64) -> Result<DVector<f64>> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        u.check()?;
        if x.len() != self.a.len() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.a.len(),
                got: x.len(),
            });
        }
        let uv = u.to_vector();
        let mut key = [0u64; INPUT_DIM + 1];
        for (k, v) in uv.iter().enumerate() {
            key[k] = v.to_bits();
        }
        key[INPUT_DIM] = dt.to_bits();

        if self.cache.as_ref().map(|c| c.key) != Some(key) {
            let mut m = self.a.clone();
            for (qi, &ui) in self.q.iter().zip(&uv) {
                if ui != 0.0 {
                    m = m.axpy(ui, qi);
                }
            }
            let lu = m.factor_shifted(-0.5 * dt, 1.0)?;
            let explicit = Tridiagonal::zeros(m.len()).axpy(0.5 * dt, &m);
            self.cache = Some(StepCache { key, explicit, lu });
        }
        let cache = self.cache.as_ref().unwrap();

        let forcing = &self.b * DVector::from_row_slice(&uv);
        let mut rhs = x + cache.explicit.mul_vec(x) + forcing * dt;
        cache.lu.solve_in_place(rhs.as_mut_slice());
        Ok(rhs)
    }
}
