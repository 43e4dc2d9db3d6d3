#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use thermonet::hydraulics::{demand_flow, pipe_resistance, DemandPoint};
use thermonet::io::{read_network, ScenarioFile, SourceColumn};
use thermonet::network::topology::HeadSlot;
use thermonet::network::{build_topology, HydraulicInputs, NetworkModel};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load(name: &str) -> NetworkModel {
    let desc = read_network(&data_dir().join(name)).unwrap();
    build_topology(&desc).unwrap()
}

/// Networks shipped in `data/`.
pub fn bundled() -> Vec<(String, NetworkModel)> {
    let mut names: Vec<String> = std::fs::read_dir(data_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

/// Valve and tap schedule of the three-path bench, `(from hour, valves, taps)`.
const SCHEDULE: [(f64, [f64; 3], [f64; 3]); 7] = [
    (0.0, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    (5.0, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]),
    (10.0, [1.0, 0.75, 0.5], [1.0, 0.0, 0.0]),
    (14.0, [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]),
    (18.0, [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
    (22.0, [0.75, 0.75, 0.75], [1.0, 1.0, 1.0]),
    (26.0, [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]),
];

/// Bench scenario at 1 s resolution: all valves shut for the first five
/// hours, then a sequence of valve and tap settings with a warm, slowly
/// oscillating feed.
pub fn three_path_scenario(hours: f64) -> ScenarioFile {
    let n = (hours * 3600.0).round() as usize;
    let time: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let phase = |t: f64| SCHEDULE.iter().rev().find(|s| t / 3600.0 >= s.0).unwrap();
    let mut valves: Vec<(String, Vec<f64>)> = (1..=3).map(|i| (format!("v{i}"), Vec::with_capacity(n))).collect();
    let mut demands: Vec<(String, Vec<f64>)> = (1..=3).map(|i| (format!("M{i}"), Vec::with_capacity(n))).collect();
    for &t in &time {
        let (_, u, d) = phase(t);
        for k in 0..3 {
            valves[k].1.push(u[k]);
            demands[k].1.push(d[k]);
        }
    }
    ScenarioFile {
        source: SourceColumn::Head,
        source_values: time.iter().map(|t| 1.5 + 0.05 * (2.0 * PI * t / 10800.0).sin()).collect(),
        inlet_temperature: time.iter().map(|t| 55.0 + 5.0 * (2.0 * PI * t / 7200.0).sin()).collect(),
        ambient_temperature: time.iter().map(|t| 18.0 + 3.0 * (2.0 * PI * t / 86400.0).sin()).collect(),
        valves,
        demands,
        time,
    }
}

const Q_SCALE: f64 = 1e-4;
const H_SCALE: f64 = 1e5;

/// Energy and mass balance written straight from the topological blocks,
/// scaled to order one.
fn balance(model: &NetworkModel, inputs: &HydraulicInputs, x: &DVector<f64>) -> DVector<f64> {
    let d = &model.description;
    let (n_p, n_n) = (model.n_links(), model.n_unknown());
    let q = x.rows(0, n_p) * Q_SCALE;
    let h = x.rows(n_p, n_n) * H_SCALE;
    let h0 = DVector::from_row_slice(&inputs.known_heads);
    let mut out = DVector::zeros(n_p + n_n);
    let heads = &model.a_pn * &h + &model.a_p0 * &h0;
    for i in 0..n_p {
        let mut link = d.links[i].hydraulic;
        if let Some(v) = link.valve.as_mut() {
            v.opening = inputs.valve_openings[i];
        }
        let r = pipe_resistance(q[i], &link, &d.fluid).unwrap();
        out[i] = (r * q[i].abs().max(1e-8) * q[i] - heads[i]) / H_SCALE;
    }
    let mut mass = -(model.a_pn.transpose() * &q);
    for (k, dem) in d.demands.iter().enumerate() {
        let j = match model.slot[model.node_index[&dem.node]] {
            HeadSlot::Unknown(j) => j,
            HeadSlot::Known(_) => unreachable!(),
        };
        let point = DemandPoint {
            opening: inputs.demand_openings[k],
            ..dem.clone()
        };
        mass[j] -= demand_flow(&point, h[j], &d.fluid).0;
    }
    out.rows_mut(n_p, n_n).copy_from(&(mass / Q_SCALE));
    out
}

/// Generic damped Newton with a central-difference Jacobian and dense LU.
pub fn root_finder(model: &NetworkModel, inputs: &HydraulicInputs) -> (DVector<f64>, DVector<f64>) {
    let (n_p, n_n) = (model.n_links(), model.n_unknown());
    let n = n_p + n_n;
    let mean_head = inputs.known_heads.iter().sum::<f64>() / inputs.known_heads.len() as f64;
    let mut x = DVector::from_fn(n, |i, _| if i < n_p { 0.5 } else { mean_head / H_SCALE });
    let mut f = balance(model, inputs, &x);
    for _ in 0..200 {
        if f.amax() < 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let eps = 1e-7 * x[c].abs().max(1e-3);
            let mut xp = x.clone();
            xp[c] += eps;
            let mut xm = x.clone();
            xm[c] -= eps;
            jac.set_column(c, &((balance(model, inputs, &xp) - balance(model, inputs, &xm)) / (2.0 * eps)));
        }
        let step = jac.lu().solve(&(-&f)).expect("oracle Jacobian is singular");
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            let ft = balance(model, inputs, &trial);
            if ft.norm() < f.norm() || t < 1e-6 {
                x = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
    }
    (x.rows(0, n_p) * Q_SCALE, x.rows(n_p, n_n) * H_SCALE)
}

pub fn assert_close_normwise(a: &DVector<f64>, b: &DVector<f64>, rel: f64, what: &str) {
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let err = (a - b).amax();
    assert!(err <= rel * scale, "{what}: deviation {err:.3e} vs scale {scale:.3e}");
}

pub fn inputs_for(model: &NetworkModel, source_bar: f64, valves: &[f64], taps: &[f64]) -> HydraulicInputs {
    let mut inp = HydraulicInputs::from_description(model, source_bar * 1e5);
    let mut k = 0;
    for (i, l) in model.description.links.iter().enumerate() {
        if l.hydraulic.valve.is_some() {
            inp.valve_openings[i] = valves[k % valves.len()];
            k += 1;
        }
    }
    for (j, u) in inp.demand_openings.iter_mut().enumerate() {
        *u = taps[j % taps.len()];
    }
    inp
}
