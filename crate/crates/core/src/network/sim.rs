//! Time stepping of the coupled network: hydraulics first, then every pipe's
//! thermal model, then flow-weighted mixing at the nodes.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::gga::{gga_solve, GgaOptions, HydraulicInputs, HydraulicState};
use super::topology::{LinkModelKind, LinkSpec, NetworkModel};
use crate::error::{Error, Result};
use crate::fom::{assemble_fom, FomIntegrator, SensorLayout, ThermalInputs, REVERSE_FLOW_TOLERANCE};
use crate::hydraulics::Q_MIN;
use crate::mor::{decouple_parameters, evaluate_rom_at, h2_reduce, project, OffsetRomIntegrator, ReducedModel, ReductionConfig};

/// Scenario values for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInputs {
    /// Source head (Pa) or injected flow (m^3/s), depending on the source mode.
    pub source: f64,
    pub inlet_temperature: f64,
    pub ambient_temperature: f64,
    /// Valve signal per link (ignored for links without a valve).
    pub valve_openings: Vec<f64>,
    pub demand_openings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start_time: f64,
    pub dt: f64,
    pub steps: Vec<StepInputs>,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub gga: GgaOptions,
    pub warm_start: bool,
    /// Uniform initial temperature of pipes and nodes; defaults to the first
    /// ambient temperature of the scenario.
    pub initial_temperature: Option<f64>,
    /// Forces every link onto one model kind.
    pub model_override: Option<LinkModelKind>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            gga: GgaOptions::default(),
            warm_start: true,
            initial_temperature: None,
            model_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// End of the step (s).
    pub time: f64,
    pub flows: Vec<f64>,
    /// Velocities handed to the thermal models, `q / a`.
    pub velocities: Vec<f64>,
    /// Head of every node in declaration order (Pa).
    pub heads: Vec<f64>,
    /// Outflow per demand (m^3/s).
    pub demands: Vec<f64>,
    pub node_temperatures: Vec<f64>,
    /// Per link: sensor temperatures, outlet last.
    pub sensor_temperatures: Vec<Vec<f64>>,
    pub iterations: usize,
    pub mass_residual: f64,
    pub energy_residual: f64,
}

/// Wall-clock accounting, kept apart from the deterministic records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: usize,
    pub hydraulic_time: Duration,
    pub thermal_time: Duration,
    pub rom_steps: usize,
    pub rom_time: Duration,
    pub total_iterations: usize,
}

impl SimStats {
    pub fn mean_hydraulic_ms(&self) -> f64 {
        mean_ms(self.hydraulic_time, self.steps)
    }

    pub fn mean_rom_step_ms(&self) -> f64 {
        mean_ms(self.rom_time, self.rom_steps)
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.steps as f64
        }
    }
}

fn mean_ms(d: Duration, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        d.as_secs_f64() * 1e3 / n as f64
    }
}

enum Engine {
    Full(FomIntegrator, crate::fom::BilinearFom),
    Reduced(OffsetRomIntegrator),
}

struct LinkState {
    engine: Engine,
    x: DVector<f64>,
    area: f64,
}

impl LinkState {
    fn outputs(&self) -> Result<Vec<f64>> {
        Ok(match &self.engine {
            Engine::Full(_, fom) => fom.measure(&self.x)?.as_slice().to_vec(),
            Engine::Reduced(integ) => integ.measure(&self.x).as_slice().to_vec(),
        })
    }

    fn step(&mut self, u: &ThermalInputs, dt: f64) -> Result<()> {
        self.x = match &mut self.engine {
            Engine::Full(integ, _) => integ.step(&self.x, u, dt)?,
            Engine::Reduced(integ) => integ.step(&self.x, u, dt)?,
        };
        Ok(())
    }
}

/// Reduction settings for a link: its configured order (capped at the grid
/// size) and reference velocity.
pub fn reduction_config(link: &LinkSpec) -> ReductionConfig {
    let mut config = ReductionConfig::new(link.thermal.rom_order.min(link.hydraulic.geometry.grid.points));
    config.reference_velocity = link.thermal.reference_velocity;
    config
}

/// Builds the reduced model of one link at its own thermal parameters.
pub fn reduce_link(link: &LinkSpec) -> Result<ReducedModel> {
    reduce_link_with(link, &reduction_config(link))
}

pub fn reduce_link_with(link: &LinkSpec, config: &ReductionConfig) -> Result<ReducedModel> {
    let g = &link.hydraulic.geometry.grid;
    let fom = assemble_fom(g, &link.thermal.params, &SensorLayout::new(link.thermal.sensors.clone()))?;
    let factors = decouple_parameters(g);
    let basis = h2_reduce(&factors, &link.thermal.params, &fom, config)?;
    project(&factors, &fom, &basis)
}

/// Reduced models for every link that uses one, sharing models between links
/// with identical geometry and thermal configuration.
pub fn reduce_links(model: &NetworkModel, kind_override: Option<LinkModelKind>) -> Result<Vec<Option<Arc<ReducedModel>>>> {
    let mut cache: HashMap<String, Arc<ReducedModel>> = HashMap::new();
    let mut out = Vec::with_capacity(model.n_links());
    for link in &model.description.links {
        if kind_override.unwrap_or(link.thermal.model) != LinkModelKind::Rom {
            out.push(None);
            continue;
        }
        let key = serde_json::to_string(&(&link.hydraulic.geometry.grid, &link.thermal)).expect("plain data serializes");
        let rom = match cache.get(&key) {
            Some(r) => r.clone(),
            None => {
                let r = Arc::new(reduce_link(link).map_err(|e| Error::Config(format!("link '{}': {e}", link.id)))?);
                cache.insert(key, r.clone());
                r
            }
        };
        out.push(Some(rom));
    }
    Ok(out)
}

/// Flow-weighted mean of the outlet temperatures entering each node. Nodes
/// whose total inflow does not exceed the regularization flow keep their
/// previous temperature.
pub fn mix_node_temperatures(model: &NetworkModel, flows: &[f64], outlet_temperatures: &[f64], previous: &[f64]) -> Vec<f64> {
    let n = model.description.nodes.len();
    let mut weight = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for (i, &(_, to)) in model.link_ends.iter().enumerate() {
        if flows[i] > Q_MIN {
            weight[to] += flows[i];
            sum[to] += flows[i] * outlet_temperatures[i];
        }
    }
    (0..n)
        .map(|j| if weight[j] > Q_MIN { sum[j] / weight[j] } else { previous[j] })
        .collect()
}

pub struct NetworkSimulator {
    model: NetworkModel,
    links: Vec<LinkState>,
    node_temperatures: Vec<f64>,
    hydraulic: Option<HydraulicState>,
    time: f64,
    options: SimOptions,
    stats: SimStats,
}

impl NetworkSimulator {
    /// Reduces every ROM link first; see [`reduce_links`].
    pub fn new(model: NetworkModel, initial_temperature: f64, options: SimOptions) -> Result<Self> {
        let roms = reduce_links(&model, options.model_override)?;
        Self::with_reduced_models(model, roms, initial_temperature, options)
    }

    /// `roms[i]` is used for link `i` when present; other links run the full model.
    pub fn with_reduced_models(
        model: NetworkModel,
        roms: Vec<Option<Arc<ReducedModel>>>,
        initial_temperature: f64,
        options: SimOptions,
    ) -> Result<Self> {
        if roms.len() != model.n_links() {
            return Err(Error::DimensionMismatch {
                what: "reduced models per link",
                expected: model.n_links(),
                got: roms.len(),
            });
        }
        if !initial_temperature.is_finite() {
            return Err(Error::InvalidParameter("initial temperature must be finite".into()));
        }
        let mut links = Vec::with_capacity(model.n_links());
        for (spec, rom) in model.description.links.iter().zip(roms) {
            let g = &spec.hydraulic.geometry.grid;
            let area = spec.hydraulic.geometry.cross_section;
            let state = match rom {
                Some(rom) => {
                    if rom.full_dim != g.points {
                        return Err(Error::Config(format!(
                            "link '{}': reduced model built for {} grid points, link has {}",
                            spec.id, rom.full_dim, g.points
                        )));
                    }
                    let integ = OffsetRomIntegrator::new(&rom, evaluate_rom_at(&rom, &spec.thermal.params), initial_temperature);
                    LinkState {
                        x: integ.uniform_state(initial_temperature),
                        engine: Engine::Reduced(integ),
                        area,
                    }
                }
                None => {
                    let fom = assemble_fom(g, &spec.thermal.params, &SensorLayout::new(spec.thermal.sensors.clone()))?;
                    LinkState {
                        engine: Engine::Full(FomIntegrator::new(&fom)?, fom),
                        x: DVector::from_element(g.points, initial_temperature),
                        area,
                    }
                }
            };
            links.push(state);
        }
        Ok(Self {
            node_temperatures: vec![initial_temperature; model.description.nodes.len()],
            model,
            links,
            hydraulic: None,
            time: 0.0,
            options,
            stats: SimStats::default(),
        })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn node_temperatures(&self) -> &[f64] {
        &self.node_temperatures
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Advances by `dt`: hydraulic solve, velocities, inlet temperatures from
    /// the node temperatures at the start of the step, pipe stepping, mixing.
    pub fn simulate_step(&mut self, inputs: &StepInputs, dt: f64) -> Result<StepRecord> {
        let t0 = self.time;
        self.step_inner(inputs, dt).map_err(|e| e.at_time(t0))
    }

    fn step_inner(&mut self, inputs: &StepInputs, dt: f64) -> Result<StepRecord> {
        let model = &self.model;
        let hin = HydraulicInputs {
            valve_openings: inputs.valve_openings.clone(),
            demand_openings: inputs.demand_openings.clone(),
            ..HydraulicInputs::from_description(model, inputs.source)
        };
        let clock = Instant::now();
        let warm = if self.options.warm_start { self.hydraulic.as_ref() } else { None };
        let sol = gga_solve(model, &hin, warm, &self.options.gga)?;
        self.stats.hydraulic_time += clock.elapsed();

        let q = sol.state.q.as_slice();
        let velocities: Vec<f64> = q.iter().zip(&self.links).map(|(qi, l)| qi / l.area).collect();
        for (i, &v) in velocities.iter().enumerate() {
            if v < -REVERSE_FLOW_TOLERANCE {
                return Err(Error::FlowReversal {
                    link: model.link_id(i).to_string(),
                    velocity: v,
                });
            }
        }

        let clock = Instant::now();
        let mut outputs = Vec::with_capacity(self.links.len());
        for (i, link) in self.links.iter_mut().enumerate() {
            let (from, _) = model.link_ends[i];
            let t_in = if Some(from) == model.source {
                inputs.inlet_temperature
            } else {
                self.node_temperatures[from]
            };
            let u = ThermalInputs::new(velocities[i], t_in, inputs.ambient_temperature);
            let rom_clock = Instant::now();
            link.step(&u, dt)?;
            if matches!(link.engine, Engine::Reduced(_)) {
                self.stats.rom_time += rom_clock.elapsed();
                self.stats.rom_steps += 1;
            }
            outputs.push(link.outputs()?);
        }
        let outlets: Vec<f64> = outputs.iter().map(|o| *o.last().expect("outlet is always measured")).collect();
        let mut mixed = mix_node_temperatures(model, q, &outlets, &self.node_temperatures);
        if let Some(s) = model.source {
            mixed[s] = inputs.inlet_temperature;
        }
        self.stats.thermal_time += clock.elapsed();

        let heads = (0..model.description.nodes.len()).map(|j| sol.state.head(model, j)).collect();
        let demands = demand_vector(model, &sol.state);
        self.node_temperatures = mixed;
        self.time += dt;
        self.stats.steps += 1;
        self.stats.total_iterations += sol.iterations;
        let record = StepRecord {
            time: self.time,
            flows: q.to_vec(),
            velocities,
            heads,
            demands,
            node_temperatures: self.node_temperatures.clone(),
            sensor_temperatures: outputs,
            iterations: sol.iterations,
            mass_residual: sol.mass_residual,
            energy_residual: sol.energy_residual,
        };
        self.hydraulic = Some(sol.state);
        Ok(record)
    }
}

fn demand_vector(model: &NetworkModel, state: &HydraulicState) -> Vec<f64> {
    let mut out = vec![0.0; model.description.demands.len()];
    for (k, d) in model.demand_at.iter().enumerate() {
        if let Some(d) = d {
            out[*d] = state.demand[k];
        }
    }
    out
}

/// Replays a scenario from a uniform initial temperature. Step `k` covers
/// `[t_0 + k dt, t_0 + (k + 1) dt]` and is recorded at its end.
pub fn run_scenario(model: &NetworkModel, scenario: &Scenario, options: &SimOptions) -> Result<(Vec<StepRecord>, SimStats)> {
    let Some(first) = scenario.steps.first() else {
        return Ok((Vec::new(), SimStats::default()));
    };
    let init = options.initial_temperature.unwrap_or(first.ambient_temperature);
    let sim = NetworkSimulator::new(model.clone(), init, options.clone())?;
    replay(sim, scenario)
}

/// Like [`run_scenario`] with the reduced models supplied by the caller.
pub fn run_scenario_with(
    model: &NetworkModel,
    roms: Vec<Option<Arc<ReducedModel>>>,
    scenario: &Scenario,
    options: &SimOptions,
) -> Result<(Vec<StepRecord>, SimStats)> {
    let Some(first) = scenario.steps.first() else {
        return Ok((Vec::new(), SimStats::default()));
    };
    let init = options.initial_temperature.unwrap_or(first.ambient_temperature);
    let sim = NetworkSimulator::with_reduced_models(model.clone(), roms, init, options.clone())?;
    replay(sim, scenario)
}

fn replay(mut sim: NetworkSimulator, scenario: &Scenario) -> Result<(Vec<StepRecord>, SimStats)> {
    if !(scenario.dt.is_finite() && scenario.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {}", scenario.dt)));
    }
    let mut records = Vec::with_capacity(scenario.steps.len());
    for (k, step) in scenario.steps.iter().enumerate() {
        sim.set_time(scenario.start_time + k as f64 * scenario.dt);
        records.push(sim.simulate_step(step, scenario.dt)?);
    }
    Ok((records, sim.stats.clone()))
}
