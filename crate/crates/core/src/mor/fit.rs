//! Least-squares identification of `(lambda, D)` from measured pipe outputs
//! with a bounded Nelder-Mead search over the reduced model.

use std::cell::Cell;

use log::{debug, warn};
use nalgebra::DVector;

use super::rom::{evaluate_rom_at, OffsetRomIntegrator, ReducedModel};
use crate::error::{Error, Result};
use crate::fom::{ThermalInputs, ThermalParameters};

#[derive(Debug, Clone)]
pub struct FitScenario {
    pub dt: f64,
    /// Input applied over each step.
    pub inputs: Vec<ThermalInputs>,
    /// Uniform initial pipe temperature.
    pub initial_temperature: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitBounds {
    pub lambda: (f64, f64),
    pub diffusion: (f64, f64),
}

impl FitBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("lambda", self.lambda), ("diffusion", self.diffusion)] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::InvalidParameter(format!("invalid {name} bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn to_params(&self, s: [f64; 2]) -> ThermalParameters {
        let map = |(lo, hi): (f64, f64), t: f64| lo + t.clamp(0.0, 1.0) * (hi - lo);
        ThermalParameters {
            lambda: map(self.lambda, s[0]),
            diffusion: map(self.diffusion, s[1]),
        }
    }

    fn to_unit(&self, p: &ThermalParameters) -> [f64; 2] {
        let unmap = |(lo, hi): (f64, f64), v: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
        [unmap(self.lambda, p.lambda), unmap(self.diffusion, p.diffusion)]
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub initial: Option<ThermalParameters>,
    pub max_evaluations: usize,
    /// Simplex size in unit box coordinates at which the search stops.
    pub x_tol: f64,
    /// Objective change, relative to the measurement energy, that counts as flat.
    pub identifiability_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial: None,
            max_evaluations: 1000,
            x_tol: 1e-9,
            identifiability_threshold: 1e-12,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub params: ThermalParameters,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Trials with a non-finite objective.
    pub rejected: usize,
    /// Per parameter `(lambda, D)`: optimum on a bound.
    pub at_bound: [bool; 2],
    /// Parameters along which the objective is flat.
    pub unidentifiable: Vec<&'static str>,
    pub converged: bool,
}

impl FitReport {
    pub fn on_boundary(&self) -> bool {
        self.at_bound.iter().any(|&b| b)
    }
}

/// Outputs after every step of the scenario.
pub fn simulate_outputs(rom: &ReducedModel, p: &ThermalParameters, scenario: &FitScenario) -> Result<Vec<DVector<f64>>> {
    let mut integ = OffsetRomIntegrator::new(rom, evaluate_rom_at(rom, p), scenario.initial_temperature);
    let mut x = integ.uniform_state(scenario.initial_temperature);
    let mut out = Vec::with_capacity(scenario.inputs.len());
    for u in &scenario.inputs {
        x = integ.step(&x, u, scenario.dt)?;
        out.push(integ.measure(&x));
    }
    Ok(out)
}

fn sum_squares(sim: &[DVector<f64>], meas: &[DVector<f64>]) -> f64 {
    sim.iter().zip(meas).map(|(a, b)| (a - b).norm_squared()).sum()
}

const NAMES: [&str; 2] = ["lambda", "diffusion"];

pub fn fit_parameters(
    rom: &ReducedModel,
    scenario: &FitScenario,
    measurements: &[DVector<f64>],
    bounds: &FitBounds,
    options: &FitOptions,
) -> Result<FitReport> {
    bounds.validate()?;
    if measurements.len() != scenario.inputs.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement samples",
            expected: scenario.inputs.len(),
            got: measurements.len(),
        });
    }
    if let Some(m) = measurements.iter().find(|m| m.len() != rom.c_red.nrows()) {
        return Err(Error::DimensionMismatch {
            what: "measured outputs per sample",
            expected: rom.c_red.nrows(),
            got: m.len(),
        });
    }
    let evaluations = Cell::new(0usize);
    let rejected = Cell::new(0usize);
    let objective = |s: [f64; 2]| -> f64 {
        evaluations.set(evaluations.get() + 1);
        let p = bounds.to_params(s);
        let j = simulate_outputs(rom, &p, scenario)
            .map(|sim| sum_squares(&sim, measurements))
            .unwrap_or(f64::NAN);
        if j.is_finite() {
            j
        } else {
            rejected.set(rejected.get() + 1);
            f64::INFINITY
        }
    };

    let start = options
        .initial
        .map(|p| bounds.to_unit(&p))
        .unwrap_or([0.5, 0.5]);
    // Clamped reflections can flatten the simplex onto a face of the box and
    // narrow valleys stall a large simplex, so the search is restarted around
    // its best point with shrinking initial simplices.
    let mut best_point = start;
    let mut best_value = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for step in RESTART_STEPS {
        let (point, value, done) = simplex_search(&objective, best_point, step, options, &evaluations, &mut iterations);
        if value < best_value {
            best_point = point;
            best_value = value;
        }
        converged = done;
        if !done {
            break;
        }
    }
    let (s_best, j_best) = (best_point, best_value);
    if !j_best.is_finite() {
        return Err(Error::Fit("every trial parameter produced a non-finite objective".into()));
    }
    if !converged {
        warn!("parameter fit stopped after {} evaluations without reaching the simplex tolerance", evaluations.get());
    }

    let energy = measurements.iter().map(|m| m.norm_squared()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut unidentifiable = Vec::new();
    for k in 0..2 {
        let mut spread: f64 = 0.0;
        for delta in [-0.1, 0.1] {
            let mut s = s_best;
            s[k] = (s[k] + delta).clamp(0.0, 1.0);
            let j = objective(s);
            spread = spread.max((j - j_best).abs());
        }
        if spread <= options.identifiability_threshold * energy {
            warn!("objective is flat along {}; parameter is not identifiable from this scenario", NAMES[k]);
            unidentifiable.push(NAMES[k]);
        }
    }
    let at_bound = [
        s_best[0] <= 1e-6 || s_best[0] >= 1.0 - 1e-6,
        s_best[1] <= 1e-6 || s_best[1] >= 1.0 - 1e-6,
    ];
    let params = bounds.to_params(s_best);
    debug!("fit finished: {params:?}, objective {j_best:e}, {} evaluations", evaluations.get());
    Ok(FitReport {
        params,
        objective: j_best,
        iterations,
        evaluations: evaluations.get(),
        rejected: rejected.get(),
        at_bound,
        unidentifiable,
        converged,
    })
}

/// Initial simplex edge, in unit box coordinates, of each successive search.
const RESTART_STEPS: [f64; 4] = [0.25, 0.05, 0.01, 0.002];

/// One Nelder-Mead run in the unit box. Returns the best vertex, its value and
/// whether the simplex shrank below the tolerance.
fn simplex_search(
    objective: &dyn Fn([f64; 2]) -> f64,
    start: [f64; 2],
    step: f64,
    options: &FitOptions,
    evaluations: &Cell<usize>,
    iterations: &mut usize,
) -> ([f64; 2], f64, bool) {
    let mut simplex = vec![start];
    for k in 0..2 {
        let mut s = start;
        s[k] = if s[k] + step <= 1.0 { s[k] + step } else { s[k] - step };
        simplex.push(s);
    }
    let mut values: Vec<f64> = simplex.iter().map(|&s| objective(s)).collect();
    let clamp = |s: [f64; 2]| [s[0].clamp(0.0, 1.0), s[1].clamp(0.0, 1.0)];

    let mut converged = false;
    while evaluations.get() < options.max_evaluations {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i]).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        let size = simplex[1..]
            .iter()
            .map(|s| (s[0] - simplex[0][0]).abs().max((s[1] - simplex[0][1]).abs()))
            .fold(0.0, f64::max);
        if size < options.x_tol && values[0].is_finite() {
            converged = true;
            break;
        }
        *iterations += 1;
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| clamp([centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])]);
        let reflected = along(-1.0);
        let fr = objective(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = objective(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let c = along(-0.5);
                (c, objective(c))
            } else {
                let c = along(0.5);
                (c, objective(c))
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = objective(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("simplex is non-empty");
    (simplex[best], values[best], converged)
}
