//! Global Gradient Algorithm: Newton iteration on link energy balance and
//! nodal mass balance, eliminating flows through the Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::topology::{HeadSlot, NetworkModel, NodeKind};
use crate::error::{Error, Result};
use crate::hydraulics::{demand_flow, head_loss, DemandPoint, HydraulicLink, Q_MIN};

/// Flow of every link at a cold start (m^3/s, in the declared direction).
pub const COLD_START_FLOW: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for GgaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            max_halvings: 6,
        }
    }
}

/// Boundary values and control signals for one hydraulic solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicInputs {
    /// Heads of the known-head nodes (Pa), in [`NetworkModel::known`] order.
    pub known_heads: Vec<f64>,
    /// Flow injected at a flow-fed source (m^3/s); ignored otherwise.
    pub source_flow: f64,
    /// Valve signal per link; links without a valve ignore theirs.
    pub valve_openings: Vec<f64>,
    pub demand_openings: Vec<f64>,
}

impl HydraulicInputs {
    /// Inputs taken from the description, with `source` as the head (or flow)
    /// of the source node.
    pub fn from_description(model: &NetworkModel, source: f64) -> Self {
        let d = &model.description;
        let known_heads = model
            .known
            .iter()
            .map(|&j| match d.nodes[j].kind {
                NodeKind::FixedHead(h) => h,
                _ => source,
            })
            .collect();
        Self {
            known_heads,
            source_flow: source,
            valve_openings: d.links.iter().map(|l| l.hydraulic.valve.map_or(1.0, |v| v.opening)).collect(),
            demand_openings: d.demands.iter().map(|p| p.opening).collect(),
        }
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        let dims = [
            ("known heads", model.n_known(), self.known_heads.len()),
            ("valve openings", model.n_links(), self.valve_openings.len()),
            ("demand openings", model.description.demands.len(), self.demand_openings.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        if self.known_heads.iter().any(|h| !h.is_finite()) || !self.source_flow.is_finite() {
            return Err(Error::InvalidParameter("non-finite hydraulic boundary value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicState {
    /// Link flows (m^3/s).
    pub q: DVector<f64>,
    /// Unknown heads (Pa).
    pub h: DVector<f64>,
    /// Known heads (Pa).
    pub h0: DVector<f64>,
    /// Demand outflow per unknown-head node (m^3/s).
    pub demand: DVector<f64>,
}

impl HydraulicState {
    /// Head of node `j` (declaration index).
    pub fn head(&self, model: &NetworkModel, j: usize) -> f64 {
        match model.slot[j] {
            HeadSlot::Known(k) => self.h0[k],
            HeadSlot::Unknown(k) => self.h[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgaSolution {
    pub state: HydraulicState,
    pub iterations: usize,
    /// `max |A_np q - q_n|` at the returned state.
    pub mass_residual: f64,
    /// `max |r q|q| - A_pn h - A_p0 h_0|` at the returned state.
    pub energy_residual: f64,
}

/// Diagonal of `A_pp = diag(r_i |q_i|)` with `|q_i|` floored at the
/// regularization flow.
pub fn assemble_app(q: &DVector<f64>, resistances: &DVector<f64>) -> DVector<f64> {
    q.zip_map(resistances, |qi, ri| ri * qi.abs().max(Q_MIN))
}

struct Prepared {
    links: Vec<HydraulicLink>,
    demands: Vec<Option<DemandPoint>>,
    injection: DVector<f64>,
}

struct Evaluation {
    energy: DVector<f64>,
    slope: DVector<f64>,
    mass: DVector<f64>,
    demand: DVector<f64>,
    demand_slope: DVector<f64>,
}

impl Evaluation {
    fn norms(&self) -> (f64, f64) {
        (self.mass.amax(), self.energy.amax())
    }
}

fn prepare(model: &NetworkModel, inputs: &HydraulicInputs) -> Prepared {
    let d = &model.description;
    let links = d
        .links
        .iter()
        .zip(&inputs.valve_openings)
        .map(|(l, &u)| {
            let mut h = l.hydraulic;
            if let Some(v) = h.valve.as_mut() {
                v.opening = u;
            }
            h
        })
        .collect();
    let demands = model
        .demand_at
        .iter()
        .map(|slot| {
            slot.map(|k| DemandPoint {
                opening: inputs.demand_openings[k],
                ..d.demands[k].clone()
            })
        })
        .collect();
    let mut injection = DVector::zeros(model.n_unknown());
    if model.injects_flow() {
        if let Some(HeadSlot::Unknown(k)) = model.source.map(|s| model.slot[s]) {
            injection[k] = inputs.source_flow;
        }
    }
    Prepared {
        links,
        demands,
        injection,
    }
}

fn evaluate(model: &NetworkModel, prep: &Prepared, q: &DVector<f64>, h: &DVector<f64>, h0: &DVector<f64>) -> Result<Evaluation> {
    let fluid = &model.description.fluid;
    let n_p = model.n_links();
    let n_n = model.n_unknown();
    let head = |j: usize| match model.slot[j] {
        HeadSlot::Known(k) => h0[k],
        HeadSlot::Unknown(k) => h[k],
    };
    let mut energy = DVector::zeros(n_p);
    let mut slope = DVector::zeros(n_p);
    let mut mass = prep.injection.clone();
    for (i, &(from, to)) in model.link_ends.iter().enumerate() {
        let (dh, ds) = head_loss(q[i], &prep.links[i], fluid)?;
        energy[i] = dh - (head(from) - head(to));
        slope[i] = ds;
        if let HeadSlot::Unknown(k) = model.slot[from] {
            mass[k] -= q[i];
        }
        if let HeadSlot::Unknown(k) = model.slot[to] {
            mass[k] += q[i];
        }
    }
    let mut demand = DVector::zeros(n_n);
    let mut demand_slope = DVector::zeros(n_n);
    for (k, dem) in prep.demands.iter().enumerate() {
        if let Some(dem) = dem {
            let (qd, dqd) = demand_flow(dem, h[k], fluid);
            demand[k] = qd;
            demand_slope[k] = dqd;
            mass[k] -= qd;
        }
    }
    Ok(Evaluation {
        energy,
        slope,
        mass,
        demand,
        demand_slope,
    })
}

/// Unknown heads interpolated harmonically between the known heads over the
/// graph (linear along a chain of links).
fn interpolated_heads(model: &NetworkModel, h0: &DVector<f64>) -> DVector<f64> {
    let lap = model.a_pn.transpose() * &model.a_pn;
    let rhs = -(model.a_pn.transpose() * (&model.a_p0 * h0));
    match Cholesky::new(lap) {
        Some(c) => c.solve(&rhs),
        None => DVector::from_element(model.n_unknown(), h0.mean()),
    }
}

pub fn cold_start(model: &NetworkModel, inputs: &HydraulicInputs) -> HydraulicState {
    let h0 = DVector::from_row_slice(&inputs.known_heads);
    HydraulicState {
        q: DVector::from_element(model.n_links(), COLD_START_FLOW),
        h: interpolated_heads(model, &h0),
        h0,
        demand: DVector::zeros(model.n_unknown()),
    }
}

pub fn gga_solve(
    model: &NetworkModel,
    inputs: &HydraulicInputs,
    warm_start: Option<&HydraulicState>,
    opts: &GgaOptions,
) -> Result<GgaSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("solver tolerance must be positive, got {}", opts.tol)));
    }
    inputs.check(model)?;
    let prep = prepare(model, inputs);
    let h0 = DVector::from_row_slice(&inputs.known_heads);
    let (mut q, mut h) = match warm_start {
        Some(s) if s.q.len() == model.n_links() && s.h.len() == model.n_unknown() => (s.q.clone(), s.h.clone()),
        _ => {
            let c = cold_start(model, inputs);
            (c.q, c.h)
        }
    };

    let mut eval = evaluate(model, &prep, &q, &h, &h0)?;
    let mut iterations = 0;
    loop {
        let (mass_res, energy_res) = eval.norms();
        if mass_res <= opts.tol && energy_res <= opts.tol {
            return Ok(GgaSolution {
                state: HydraulicState {
                    q,
                    h,
                    h0,
                    demand: eval.demand,
                },
                iterations,
                mass_residual: mass_res,
                energy_residual: energy_res,
            });
        }
        if iterations >= opts.max_iter || !(mass_res.is_finite() && energy_res.is_finite()) {
            return Err(Error::HydraulicNonConvergence {
                iterations,
                mass_residual: mass_res,
                energy_residual: energy_res,
            });
        }
        iterations += 1;

        let (dq, dh) = newton_direction(model, &eval)?;
        // Same units as the stopping test. Scaling the energy rows by the link
        // slopes instead lets rounding noise on low-resistance links veto steps.
        let merit = |e: &Evaluation| e.energy.norm_squared() + e.mass.norm_squared();
        let base = merit(&eval);
        let mut step = 1.0;
        let mut halvings = 0;
        loop {
            let q_try = &q + &dq * step;
            let h_try = &h + &dh * step;
            let trial = evaluate(model, &prep, &q_try, &h_try, &h0)?;
            if merit(&trial) < base || halvings >= opts.max_halvings {
                q = q_try;
                h = h_try;
                eval = trial;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
    }
}

/// Solves `(A_np D^-1 A_pn + D_nn) dh = G + A_np D^-1 F`, then
/// `dq = D^-1 (A_pn dh - F)`, with `F` the energy and `G` the mass residual.
fn newton_direction(model: &NetworkModel, eval: &Evaluation) -> Result<(DVector<f64>, DVector<f64>)> {
    let n_n = model.n_unknown();
    let inv = eval.slope.map(|s| 1.0 / s);
    let mut schur = DMatrix::from_diagonal(&eval.demand_slope);
    let mut rhs = eval.mass.clone();
    for (i, &(from, to)) in model.link_ends.iter().enumerate() {
        // row i of A_pn: +1 at `from`, -1 at `to` (unknown columns only)
        let ends = [(from, 1.0), (to, -1.0)];
        let ks: Vec<(usize, f64)> = ends
            .iter()
            .filter_map(|&(j, s)| match model.slot[j] {
                HeadSlot::Unknown(k) => Some((k, s)),
                HeadSlot::Known(_) => None,
            })
            .collect();
        for &(a, sa) in &ks {
            rhs[a] += sa * inv[i] * eval.energy[i];
            for &(b, sb) in &ks {
                schur[(a, b)] += sa * sb * inv[i];
            }
        }
    }
    let dh = if n_n == 0 {
        DVector::zeros(0)
    } else {
        let scale = schur.diagonal().amax();
        match Cholesky::new(schur.clone()) {
            Some(c) if scale.is_finite() && scale > 0.0 => c.solve(&rhs),
            _ => {
                let diag = schur.diagonal();
                let weak: Vec<String> = (0..n_n)
                    .filter(|&k| !(diag[k] > 1e-14 * scale))
                    .map(|k| model.node_id(model.unknown[k]).to_string())
                    .collect();
                let nodes = if weak.is_empty() {
                    model.unknown.iter().map(|&j| model.node_id(j).to_string()).collect()
                } else {
                    weak
                };
                return Err(Error::Structural { nodes });
            }
        }
    };
    let mut dq = -eval.energy.clone();
    for (i, &(from, to)) in model.link_ends.iter().enumerate() {
        if let HeadSlot::Unknown(k) = model.slot[from] {
            dq[i] += dh[k];
        }
        if let HeadSlot::Unknown(k) = model.slot[to] {
            dq[i] -= dh[k];
        }
        dq[i] *= inv[i];
    }
    Ok((dq, dh))
}

/// Residual norms `(mass, energy)` of an arbitrary state, recomputed from scratch.
pub fn residuals(model: &NetworkModel, inputs: &HydraulicInputs, state: &HydraulicState) -> Result<(f64, f64)> {
    inputs.check(model)?;
    let prep = prepare(model, inputs);
    let h0 = DVector::from_row_slice(&inputs.known_heads);
    Ok(evaluate(model, &prep, &state.q, &state.h, &h0)?.norms())
}

#[cfg(test)]
mod tests {
    use super::super::topology::fixtures::*;
    use super::super::topology::*;
    use super::*;
    use crate::hydraulics::pipe_resistance;

    #[test]
    fn app_examples() {
        let d = assemble_app(&DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![2.0]));
        assert_eq!(d[0], 6.0);
        let d = assemble_app(&DVector::from_vec(vec![0.0, -2.0]), &DVector::from_vec(vec![5.0, 1.5]));
        assert_eq!(d[0], 5.0 * Q_MIN);
        assert_eq!(d[1], 3.0);
    }

    #[test]
    fn single_pipe_closed_form() {
        let mut d = single_pipe();
        d.nodes[1].kind = NodeKind::FixedHead(0.5e5);
        let m = build_topology(&d).unwrap();
        let inputs = HydraulicInputs::from_description(&m, 1.0e5);
        let sol = gga_solve(&m, &inputs, None, &Default::default()).unwrap();
        let q = sol.state.q[0];
        let r = pipe_resistance(q, &d.links[0].hydraulic, &d.fluid).unwrap();
        let expected = (0.5e5 / r).sqrt();
        assert!(((q - expected) / expected).abs() < 1e-9, "{q} vs {expected}");
        assert!(sol.energy_residual <= 1e-9);
    }

    #[test]
    fn cold_start_heads_are_linear_along_a_chain() {
        let mut d = single_pipe();
        d.nodes.push(node("B", NodeKind::Junction));
        d.nodes.push(node("O", NodeKind::FixedHead(0.0)));
        d.links.push(pipe("q", "A", "B", 1.0, 0.02));
        d.links.push(pipe("r", "B", "O", 1.0, 0.02));
        let m = build_topology(&d).unwrap();
        let c = cold_start(&m, &HydraulicInputs::from_description(&m, 3.0));
        assert!((c.h[0] - 2.0).abs() < 1e-12 && (c.h[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn demand_is_fed_through_the_pipe() {
        let mut d = single_pipe();
        d.demands.push(DemandPoint {
            node: "A".into(),
            emitter_coefficient: 0.6,
            area_open: 2e-5,
            area_closed: 1e-9,
            opening: 1.0,
        });
        let m = build_topology(&d).unwrap();
        let inputs = HydraulicInputs::from_description(&m, 2e5);
        let sol = gga_solve(&m, &inputs, None, &Default::default()).unwrap();
        assert!((sol.state.q[0] - sol.state.demand[0]).abs() <= 1e-9);
        assert!(sol.state.h[0] > 0.0 && sol.state.h[0] < 2e5);
    }

    #[test]
    fn warm_start_from_solution_needs_no_iterations() {
        let mut d = single_pipe();
        d.nodes[1].kind = NodeKind::FixedHead(0.0);
        let m = build_topology(&d).unwrap();
        let inputs = HydraulicInputs::from_description(&m, 1e5);
        let sol = gga_solve(&m, &inputs, None, &Default::default()).unwrap();
        let again = gga_solve(&m, &inputs, Some(&sol.state), &Default::default()).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.state, sol.state);
    }

    #[test]
    fn iteration_cap_reports_residuals() {
        let mut d = single_pipe();
        d.nodes[1].kind = NodeKind::FixedHead(0.0);
        let m = build_topology(&d).unwrap();
        let inputs = HydraulicInputs::from_description(&m, 1e5);
        let opts = GgaOptions {
            max_iter: 1,
            ..Default::default()
        };
        match gga_solve(&m, &inputs, None, &opts) {
            Err(Error::HydraulicNonConvergence {
                iterations,
                energy_residual,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(energy_residual > 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flow_source_injects_its_flow() {
        let mut d = single_pipe();
        d.source_mode = SourceMode::Flow;
        d.nodes.push(node("O", NodeKind::FixedHead(1e5)));
        d.links.push(pipe("r", "A", "O", 10.0, 0.02));
        let m = build_topology(&d).unwrap();
        let inputs = HydraulicInputs::from_description(&m, 2e-4);
        let sol = gga_solve(&m, &inputs, None, &Default::default()).unwrap();
        assert!((sol.state.q[0] - 2e-4).abs() <= 1e-9 && (sol.state.q[1] - 2e-4).abs() <= 1e-9);
        let s = sol.state.head(&m, m.node_index["S"]);
        assert!(s > sol.state.head(&m, m.node_index["A"]));
    }
}
