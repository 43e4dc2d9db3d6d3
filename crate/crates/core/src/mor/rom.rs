//! Parameter-independent reduced matrices, their evaluation at a parameter
//! vector and time stepping.

use std::path::Path;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use super::factors::{hstack, ParameterMaps, ParametricFactors, A_TERMS, B_TERMS, G_MAP_ID, H_MAP_ID};
use super::h2::ProjectionBasis;
use crate::error::{Error, Result};
use crate::fom::{BilinearFom, ThermalInputs, ThermalParameters, INPUT_DIM};

/// `cond(W^T V)` above this is rejected.
pub const MAX_PROJECTION_CONDITION: f64 = 1e10;

pub const ROM_FORMAT: &str = "thermonet-rom";
pub const ROM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionInfo {
    pub converged: bool,
    pub iterations: usize,
    pub eigenvalue_change: Option<f64>,
    pub condition: f64,
    pub bilinear_scaling: f64,
    pub restarts: usize,
    pub reference_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub full_dim: usize,
    /// `T [A1 V, A2 V]`, r x 2r.
    pub a_red: DMatrix<f64>,
    /// `T [Q1 V, .., Q4 V]`, r x 4r.
    pub q_red: DMatrix<f64>,
    /// `T [B1, B2, B3]`, r x 12.
    pub b_red: DMatrix<f64>,
    pub c_red: DMatrix<f64>,
    /// Trial basis `V`, used to lift reduced states.
    pub basis: DMatrix<f64>,
    /// `(W^T V)^-1 W^T`, used to reduce full states.
    pub projector: DMatrix<f64>,
    pub maps: ParameterMaps,
    pub g_map: String,
    pub h_map: String,
    pub sensor_indices: Vec<usize>,
    /// Parameters the basis was computed at.
    pub reference: ThermalParameters,
    pub reduction: ReductionInfo,
}

pub fn project(factors: &ParametricFactors, fom: &BilinearFom, basis: &ProjectionBasis) -> Result<ReducedModel> {
    let n = factors.state_dim();
    let (v, w) = (&basis.v, &basis.w);
    if v.nrows() != n || w.nrows() != n || fom.state_dim() != n {
        return Err(Error::DimensionMismatch {
            what: "projection basis rows",
            expected: n,
            got: v.nrows(),
        });
    }
    if v.ncols() != w.ncols() || v.ncols() == 0 || v.ncols() > n {
        return Err(Error::DimensionMismatch {
            what: "projection basis columns",
            expected: v.ncols(),
            got: w.ncols(),
        });
    }
    let wtv = w.transpose() * v;
    let condition = super::dense::condition_number(&wtv);
    if !(condition <= MAX_PROJECTION_CONDITION) {
        return Err(Error::Projection { condition });
    }
    let t = wtv
        .lu()
        .solve(&w.transpose())
        .ok_or(Error::Projection { condition })?;

    let a_red = hstack(&factors.a.iter().map(|a| &t * a.mul_dense(v)).collect::<Vec<_>>());
    let q_red = hstack(&fom.q.iter().map(|q| &t * q.mul_dense(v)).collect::<Vec<_>>());
    let b_red = &t * factors.b_matricized();
    let c_red = fom.c.mul_dense(v);

    Ok(ReducedModel {
        format: ROM_FORMAT.into(),
        version: ROM_FORMAT_VERSION,
        order: v.ncols(),
        full_dim: n,
        a_red,
        q_red,
        b_red,
        c_red,
        basis: v.clone(),
        projector: t,
        maps: factors.maps,
        g_map: G_MAP_ID.into(),
        h_map: H_MAP_ID.into(),
        sensor_indices: fom.sensor_indices.clone(),
        reference: basis.reference,
        reduction: ReductionInfo {
            converged: basis.converged,
            iterations: basis.iterations,
            eigenvalue_change: basis.eigenvalue_change.is_finite().then_some(basis.eigenvalue_change),
            condition,
            bilinear_scaling: basis.bilinear_scaling,
            restarts: basis.restarts,
            reference_velocity: basis.reference_velocity,
        },
    })
}

/// Reduced matrices at one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RomAtParameter {
    pub a: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn evaluate_rom_at(rom: &ReducedModel, p: &ThermalParameters) -> RomAtParameter {
    let r = rom.order;
    let g = rom.maps.g(p);
    let h = rom.maps.h(p);
    let mut a = DMatrix::zeros(r, r);
    for (k, gk) in g.iter().enumerate().take(A_TERMS) {
        a += rom.a_red.columns(k * r, r) * *gk;
    }
    let mut b = DMatrix::zeros(r, INPUT_DIM);
    for (k, hk) in h.iter().enumerate().take(B_TERMS) {
        b += rom.b_red.columns(k * INPUT_DIM, INPUT_DIM) * *hk;
    }
    let q = (0..INPUT_DIM).map(|k| rom.q_red.columns(k * r, r).into_owned()).collect();
    RomAtParameter {
        a,
        q,
        b,
        c: rom.c_red.clone(),
    }
}

impl ReducedModel {
    pub fn lift(&self, x_r: &DVector<f64>) -> DVector<f64> {
        &self.basis * x_r
    }

    pub fn reduce_state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projector * x
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Config(format!("cannot serialize reduced model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rom: ReducedModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "<reduced model>".into(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        rom.check()?;
        Ok(rom)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                file: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        if self.format != ROM_FORMAT || self.version != ROM_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported reduced model format {} v{}",
                self.format, self.version
            )));
        }
        if self.g_map != G_MAP_ID || self.h_map != H_MAP_ID {
            return Err(Error::Config(format!(
                "unknown parameter maps {} / {}",
                self.g_map, self.h_map
            )));
        }
        let r = self.order;
        let shapes = [
            ("a_red", self.a_red.shape(), (r, A_TERMS * r)),
            ("q_red", self.q_red.shape(), (r, INPUT_DIM * r)),
            ("b_red", self.b_red.shape(), (r, B_TERMS * INPUT_DIM)),
            ("basis", self.basis.shape(), (self.full_dim, r)),
            ("projector", self.projector.shape(), (r, self.full_dim)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.c_red.ncols() != r {
            return Err(Error::Config("c_red column count differs from the order".into()));
        }
        Ok(())
    }
}

impl RomAtParameter {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn rhs(&self, x_r: &DVector<f64>, u: &ThermalInputs) -> DVector<f64> {
        let u = u.to_vector();
        let mut out = &self.a * x_r + &self.b * DVector::from_row_slice(&u);
        for (qk, uk) in self.q.iter().zip(u) {
            if uk != 0.0 {
                out += qk * x_r * uk;
            }
        }
        out
    }

    pub fn measure(&self, x_r: &DVector<f64>) -> DVector<f64> {
        &self.c * x_r
    }

    /// Spectrum of the reduced state matrix.
    pub fn eigenvalues(&self) -> Vec<num_complex::Complex64> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
struct RomStepCache {
    key: [u64; INPUT_DIM + 1],
    explicit: DMatrix<f64>,
    bu: DVector<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Trapezoidal stepper on dense reduced matrices, same contract as the
/// full-order integrator.
#[derive(Debug, Clone)]
pub struct RomIntegrator {
    model: RomAtParameter,
    cache: Option<RomStepCache>,
}

impl RomIntegrator {
    pub fn new(model: RomAtParameter) -> Self {
        Self { model, cache: None }
    }

    pub fn model(&self) -> &RomAtParameter {
        &self.model
    }

    pub fn step(&mut self, x_r: &DVector<f64>, u: &ThermalInputs, dt: f64) -> Result<DVector<f64>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        u.check()?;
        let r = self.model.order();
        if x_r.len() != r {
            return Err(Error::DimensionMismatch {
                what: "reduced state",
                expected: r,
                got: x_r.len(),
            });
        }
        let uv = u.to_vector();
        let key = [uv[0].to_bits(), uv[1].to_bits(), uv[2].to_bits(), uv[3].to_bits(), dt.to_bits()];
        if self.cache.as_ref().is_none_or(|c| c.key != key) {
            let mut m = self.model.a.clone();
            for (qk, uk) in self.model.q.iter().zip(uv) {
                if uk != 0.0 {
                    m += qk * uk;
                }
            }
            let half = 0.5 * dt;
            let eye = DMatrix::<f64>::identity(r, r);
            let implicit = &eye - &m * half;
            let explicit = &eye + &m * half;
            let lu = implicit.lu();
            if !lu.is_invertible() {
                return Err(Error::Singular("reduced trapezoidal matrix".into()));
            }
            let bu = &self.model.b * DVector::from_row_slice(&uv) * dt;
            self.cache = Some(RomStepCache { key, explicit, bu, lu });
        }
        let c = self.cache.as_ref().expect("cache filled above");
        let rhs = &c.explicit * x_r + &c.bu;
        c.lu.solve(&rhs)
            .ok_or_else(|| Error::Singular("reduced trapezoidal matrix".into()))
    }
}

/// Reduced stepper working on temperatures relative to a fixed offset.
///
/// The pipe equations are invariant under a common shift of state, inlet and
/// ambient temperature, so this is the same model; it lets a uniform profile
/// at the offset start from the exact reduced state zero.
#[derive(Debug, Clone)]
pub struct OffsetRomIntegrator {
    integ: RomIntegrator,
    basis: DMatrix<f64>,
    projector: DMatrix<f64>,
    offset: f64,
}

impl OffsetRomIntegrator {
    pub fn new(rom: &ReducedModel, model: RomAtParameter, offset: f64) -> Self {
        Self {
            integ: RomIntegrator::new(model),
            basis: rom.basis.clone(),
            projector: rom.projector.clone(),
            offset,
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn uniform_state(&self, temperature: f64) -> DVector<f64> {
        let shift = temperature - self.offset;
        self.projector.column_sum() * shift
    }

    pub fn reduce_state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projector * x.add_scalar(-self.offset)
    }

    pub fn lift(&self, x_r: &DVector<f64>) -> DVector<f64> {
        (&self.basis * x_r).add_scalar(self.offset)
    }

    pub fn measure(&self, x_r: &DVector<f64>) -> DVector<f64> {
        self.integ.model().measure(x_r).add_scalar(self.offset)
    }

    pub fn step(&mut self, x_r: &DVector<f64>, u: &ThermalInputs, dt: f64) -> Result<DVector<f64>> {
        let shifted = ThermalInputs::new(
            u.velocity,
            u.inlet_temperature - self.offset,
            u.ambient_temperature - self.offset,
        );
        self.integ.step(x_r, &shifted, dt)
    }
}

/// One step without keeping a factorization around.
pub fn step_rom(model: &RomAtParameter, x_r: &DVector<f64>, u: &ThermalInputs, dt: f64) -> Result<DVector<f64>> {
    RomIntegrator::new(model.clone()).step(x_r, u, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{assemble_fom, build_grid, FomIntegrator, SensorLayout};
    use crate::mor::factors::decouple_parameters;
    use crate::mor::h2::ProjectionBasis;

    fn setup(n: usize) -> (ParametricFactors, BilinearFom, ThermalParameters) {
        let grid = build_grid(5.0, n).unwrap();
        let p = ThermalParameters::new(0.01, 2e-3).unwrap();
        let fom = assemble_fom(&grid, &p, &SensorLayout::new(vec![2.5, 5.0])).unwrap();
        (decouple_parameters(&grid), fom, p)
    }

    #[test]
    fn identity_projection_reproduces_fom_matrices() {
        let (f, fom, p) = setup(12);
        let basis = ProjectionBasis::identity(12, p);
        let rom = project(&f, &fom, &basis).unwrap();
        let at = evaluate_rom_at(&rom, &p);
        assert_eq!(at.a, fom.a.to_dense());
        assert_eq!(at.b, fom.b.to_dense());
        assert_eq!(at.c, fom.c.to_dense());
        for (qr, qf) in at.q.iter().zip(&fom.q) {
            assert_eq!(qr, &qf.to_dense());
        }
    }

    #[test]
    fn rank_one_is_rayleigh_quotient() {
        let (f, fom, p) = setup(9);
        let v = DMatrix::from_fn(9, 1, |i, _| (i as f64 + 1.0).sqrt());
        let v = &v / v.norm();
        let basis = ProjectionBasis::from_bases(v.clone(), v.clone(), p);
        let rom = project(&f, &fom, &basis).unwrap();
        let at = evaluate_rom_at(&rom, &p);
        let rq = (v.transpose() * fom.a.to_dense() * &v)[(0, 0)];
        assert!((at.a[(0, 0)] - rq).abs() < 1e-15);
    }

    #[test]
    fn zero_parameters_null_the_state_matrix() {
        let (f, fom, p) = setup(9);
        let rom = project(&f, &fom, &ProjectionBasis::identity(9, p)).unwrap();
        let at = evaluate_rom_at(&rom, &ThermalParameters::new(0.0, 0.0).unwrap());
        assert!(at.a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (f, fom, p) = setup(9);
        let v = DMatrix::from_fn(9, 3, |i, j| ((i * (j + 1)) as f64).cos());
        let v = crate::mor::dense::orthonormalize(&v).unwrap();
        let rom = project(&f, &fom, &ProjectionBasis::from_bases(v.clone(), v, p)).unwrap();
        let q = ThermalParameters::new(0.3, 0.7).unwrap();
        assert_eq!(evaluate_rom_at(&rom, &q), evaluate_rom_at(&rom, &q));
    }

    #[test]
    fn identity_rom_follows_fom_steps() {
        let (f, fom, p) = setup(15);
        let rom = project(&f, &fom, &ProjectionBasis::identity(15, p)).unwrap();
        let mut ri = RomIntegrator::new(evaluate_rom_at(&rom, &p));
        let mut fi = FomIntegrator::new(&fom).unwrap();
        let mut x = DVector::from_element(15, 20.0);
        let mut xr = rom.reduce_state(&x);
        for k in 0..200 {
            let u = ThermalInputs::new(0.05 + 0.01 * (k as f64 * 0.1).sin(), 50.0, 18.0);
            x = fi.step(&x, &u, 1.0).unwrap();
            xr = ri.step(&xr, &u, 1.0).unwrap();
        }
        assert!((rom.lift(&xr) - x).amax() < 1e-10);
    }

    #[test]
    fn rejects_degenerate_projection() {
        let (f, fom, p) = setup(6);
        let mut v = DMatrix::zeros(6, 2);
        v[(0, 0)] = 1.0;
        v[(1, 1)] = 1.0;
        let mut w = DMatrix::zeros(6, 2);
        w[(0, 0)] = 1.0;
        w[(2, 1)] = 1.0;
        let err = project(&f, &fom, &ProjectionBasis::from_bases(v, w, p));
        assert!(matches!(err, Err(Error::Projection { .. })));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (f, fom, p) = setup(10);
        let v = DMatrix::from_fn(10, 3, |i, j| ((i + 2 * j) as f64 * 0.37).sin() + 0.1 * j as f64);
        let v = crate::mor::dense::orthonormalize(&v).unwrap();
        let rom = project(&f, &fom, &ProjectionBasis::from_bases(v.clone(), v, p)).unwrap();
        let back = ReducedModel::from_json(&rom.to_json().unwrap()).unwrap();
        assert_eq!(back, rom);
        let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.a_red), bits(&rom.a_red));
        assert_eq!(bits(&back.projector), bits(&rom.projector));
    }
}
