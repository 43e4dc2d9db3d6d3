use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde_json::json;

use thermonet::fom::{assemble_fom, SensorLayout, ThermalInputs, ThermalParameters};
use thermonet::io::{
    atomic_write, bar_to_pa, compare_results, fom_to_json, lpm_to_m3s, m3s_to_lpm, pa_to_bar, read_network, read_results,
    read_scenario, results_table, sensor_columns, write_meta,
};
use thermonet::mor::{evaluate_rom_at, fit_parameters, FitBounds, FitOptions, FitScenario, ReducedModel};
use thermonet::network::{
    build_topology, gga_solve, reduce_link_with, reduce_links, reduction_config, run_scenario_with, GgaOptions,
    HydraulicInputs, LinkModelKind, NetworkModel, SimOptions, SourceMode,
};
use thermonet::{Error, Result};

use crate::{FitArgs, HydraulicsArgs, ModelChoice, ReduceArgs, SimulateArgs};

fn load_model(path: &Path) -> Result<NetworkModel> {
    build_topology(&read_network(path)?)
}

fn link_index(model: &NetworkModel, id: &str) -> Result<usize> {
    model
        .link_index(id)
        .ok_or_else(|| Error::Config(format!("network has no link '{id}'")))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialize output: {e}")))
}

fn gga_options(tol: Option<f64>, max_iter: Option<usize>) -> GgaOptions {
    let d = GgaOptions::default();
    GgaOptions {
        tol: tol.unwrap_or(d.tol),
        max_iter: max_iter.unwrap_or(d.max_iter),
        ..d
    }
}

pub fn build_fom(network: &Path, link: &str, out: Option<&Path>) -> Result<()> {
    let model = load_model(network)?;
    let spec = &model.description.links[link_index(&model, link)?];
    let g = &spec.hydraulic.geometry.grid;
    let fom = assemble_fom(g, &spec.thermal.params, &SensorLayout::new(spec.thermal.sensors.clone()))?;
    let n = g.points;
    let density = |nnz: usize, rows: usize, cols: usize| 100.0 * nnz as f64 / (rows * cols) as f64;
    println!("link {link}: N = {n}, dz = {} m, outputs at grid rows {:?}", g.dz, fom.sensor_indices);
    println!("A      {n} x {n}, {} nonzeros ({:.2}% dense)", fom.a.nnz(), density(fom.a.nnz(), n, n));
    for (k, q) in fom.q.iter().enumerate() {
        println!("Q{}     {n} x {n}, {} nonzeros", k + 1, q.nnz());
    }
    println!("B      {} x {}, {} nonzeros", fom.b.nrows(), fom.b.ncols(), fom.b.nnz());
    println!("C      {} x {}, {} nonzeros", fom.c.nrows(), fom.c.ncols(), fom.c.nnz());
    if let Some(out) = out {
        atomic_write(out, fom_to_json(&fom)?.as_bytes())?;
    }
    Ok(())
}

pub fn reduce(a: ReduceArgs) -> Result<()> {
    let model = load_model(&a.network)?;
    let mut spec = model.description.links[link_index(&model, &a.link)?].clone();
    spec.thermal.params = ThermalParameters::new(
        a.lambda.unwrap_or(spec.thermal.params.lambda),
        a.diffusion.unwrap_or(spec.thermal.params.diffusion),
    )?;
    if let Some(v) = a.reference_velocity {
        spec.thermal.reference_velocity = v;
    }
    let mut config = reduction_config(&spec);
    if let Some(r) = a.order {
        config.order = r;
    }
    if let Some(t) = a.tol {
        config.tol = t;
    }
    if let Some(m) = a.max_iter {
        config.max_iter = m;
    }
    config.seed = a.seed;

    let clock = Instant::now();
    let rom = reduce_link_with(&spec, &config)?;
    let seconds = clock.elapsed().as_secs_f64();
    rom.save(&a.out)?;

    let info = &rom.reduction;
    println!("link {}: order {} of {}", a.link, rom.order, rom.full_dim);
    println!(
        "converged {} after {} iterations (spectral change {}), {} restarts, bilinear weight {}",
        info.converged,
        info.iterations,
        info.eigenvalue_change.map_or("n/a".into(), |c| format!("{c:.3e}")),
        info.restarts,
        info.bilinear_scaling
    );
    println!("cond(W^T V) = {:.3e}", info.condition);
    let eig = evaluate_rom_at(&rom, &spec.thermal.params).eigenvalues();
    let shown: Vec<String> = eig.iter().map(|z| format!("{:.4e}{:+.4e}i", z.re, z.im)).collect();
    println!("reduced eigenvalues at the reference point: {}", shown.join(", "));
    if !info.converged {
        log::warn!("basis iteration stopped before meeting its tolerance");
    }
    write_meta(
        &a.out,
        &json!({
            "command": "reduce",
            "network": a.network.display().to_string(),
            "link": a.link,
            "seconds": seconds,
            "reduction": info,
        }),
    )
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let model = load_model(&a.network)?;
    let scenario = read_scenario(&a.scenario)?.to_scenario(&model, a.dt)?;
    let model_override = a.model.map(|m| match m {
        ModelChoice::Fom => LinkModelKind::Fom,
        ModelChoice::Rom => LinkModelKind::Rom,
    });
    let options = SimOptions {
        gga: gga_options(a.tol, a.max_iter),
        warm_start: !a.cold_start,
        initial_temperature: a.initial_temperature,
        model_override,
    };

    let clock = Instant::now();
    let mut roms = reduce_links(&model, model_override)?;
    for (link, path) in &a.roms {
        let i = link_index(&model, link)?;
        roms[i] = Some(Arc::new(ReducedModel::load(path)?));
    }
    let reduction_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let (records, stats) = run_scenario_with(&model, roms, &scenario, &options)?;
    let run_seconds = clock.elapsed().as_secs_f64();

    results_table(&model, &records).write(&a.out)?;
    println!(
        "{} steps, mean hydraulic solve {:.3} ms ({:.2} iterations), mean reduced step {:.4} ms",
        stats.steps,
        stats.mean_hydraulic_ms(),
        stats.mean_iterations(),
        stats.mean_rom_step_ms()
    );
    write_meta(
        &a.out,
        &json!({
            "command": "simulate",
            "network": a.network.display().to_string(),
            "scenario": a.scenario.display().to_string(),
            "steps": stats.steps,
            "dt": scenario.dt,
            "model": match model_override {
                Some(LinkModelKind::Fom) => "fom",
                Some(LinkModelKind::Rom) => "rom",
                None => "per-link",
            },
            "warm_start": options.warm_start,
            "reduction_seconds": reduction_seconds,
            "run_seconds": run_seconds,
            "mean_hydraulic_ms": stats.mean_hydraulic_ms(),
            "mean_rom_step_ms": stats.mean_rom_step_ms(),
            "mean_iterations": stats.mean_iterations(),
            "hydraulic_seconds": stats.hydraulic_time.as_secs_f64(),
            "thermal_seconds": stats.thermal_time.as_secs_f64(),
        }),
    )
}

pub fn hydraulics(a: HydraulicsArgs) -> Result<()> {
    let model = load_model(&a.network)?;
    let d = &model.description;
    let source = match d.source_mode {
        SourceMode::Head => bar_to_pa(a.source),
        SourceMode::Flow => lpm_to_m3s(a.source),
    };
    let mut inputs = HydraulicInputs::from_description(&model, source);
    for (id, u) in &a.valves {
        let i = link_index(&model, id)?;
        if d.links[i].hydraulic.valve.is_none() {
            return Err(Error::Config(format!("link '{id}' has no valve")));
        }
        inputs.valve_openings[i] = *u;
    }
    for (id, u) in &a.demands {
        let k = d
            .demands
            .iter()
            .position(|p| &p.node == id)
            .ok_or_else(|| Error::Config(format!("no demand at node '{id}'")))?;
        inputs.demand_openings[k] = *u;
    }
    let sol = gga_solve(&model, &inputs, None, &gga_options(a.tol, a.max_iter))?;

    println!("{:<12} {:>14} {:>12}", "link", "q (l/min)", "v (m/s)");
    for (i, l) in d.links.iter().enumerate() {
        let q = sol.state.q[i];
        println!("{:<12} {:>14.6} {:>12.6}", l.id, m3s_to_lpm(q), q / l.hydraulic.geometry.cross_section);
    }
    println!("{:<12} {:>14}", "node", "h (bar)");
    for (j, n) in d.nodes.iter().enumerate() {
        println!("{:<12} {:>14.8}", n.id, pa_to_bar(sol.state.head(&model, j)));
    }
    for (k, &j) in model.unknown.iter().enumerate() {
        if model.demand_at[k].is_some() {
            println!("demand at {:<6} {:>14.6} l/min", d.nodes[j].id, m3s_to_lpm(sol.state.demand[k]));
        }
    }
    println!(
        "{} iterations, mass residual {:.3e} m^3/s, energy residual {:.3e} Pa",
        sol.iterations, sol.mass_residual, sol.energy_residual
    );
    Ok(())
}

pub fn compare(reference: &Path, predicted: &Path, columns: Option<&str>, out: Option<&Path>) -> Result<()> {
    let m = compare_results(&read_results(reference)?, &read_results(predicted)?, columns)?;
    println!("{:<24} {:>14} {:>12}", "signal", "max abs", "MRE (%)");
    for (name, s) in &m.signals {
        println!("{name:<24} {:>14.6e} {:>12.6}", s.max_abs_error, s.mean_relative_error);
    }
    println!("{:<24} {:>14.6e} {:>12.6}", "overall", m.max_abs_error, m.mean_relative_error);
    if let Some(out) = out {
        atomic_write(out, to_json(&m)?.as_bytes())?;
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<()> {
    let model = load_model(&a.network)?;
    let i = link_index(&model, &a.link)?;
    let spec = &model.description.links[i];
    let scenario_file = read_scenario(&a.scenario)?;
    let scenario = scenario_file.to_scenario(&model, None)?;
    let meas = read_results(&a.measurements)?;
    let file = a.measurements.display().to_string();
    let column = |name: &str| {
        meas.column(name).ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: Some(1),
            message: format!("missing column '{name}'"),
        })
    };
    if meas.rows.len() != scenario.steps.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement rows vs scenario rows",
            expected: scenario.steps.len(),
            got: meas.rows.len(),
        });
    }

    let initial = a
        .initial_temperature
        .or_else(|| scenario.steps.first().map(|s| s.ambient_temperature))
        .unwrap_or(0.0);
    let flows = column(&format!("q:{}", spec.id))?;
    let (from, _) = model.link_ends[i];
    let upstream = if Some(from) == model.source {
        None
    } else {
        Some(column(&format!("T:{}", model.node_id(from)))?)
    };
    let area = spec.hydraulic.geometry.cross_section;
    let inputs: Vec<ThermalInputs> = scenario
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            // inlet temperatures lag one step: nodes are mixed at the end of a step
            let t_in = match &upstream {
                None => s.inlet_temperature,
                Some(_) if k == 0 => initial,
                Some(t) => t[k - 1],
            };
            ThermalInputs::new(lpm_to_m3s(flows[k]) / area, t_in, s.ambient_temperature)
        })
        .collect();
    let sensors = sensor_columns(&model, i)
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let measurements: Vec<DVector<f64>> = (0..inputs.len())
        .map(|k| DVector::from_iterator(sensors.len(), sensors.iter().map(|s| s[k])))
        .collect();

    let mut config = reduction_config(spec);
    if let Some(r) = a.order {
        config.order = r;
    }
    let rom = reduce_link_with(spec, &config)?;
    let report = fit_parameters(
        &rom,
        &FitScenario {
            dt: scenario.dt,
            inputs,
            initial_temperature: initial,
        },
        &measurements,
        &FitBounds {
            lambda: a.lambda_bounds,
            diffusion: a.diffusion_bounds,
        },
        &FitOptions {
            initial: Some(spec.thermal.params),
            ..FitOptions::default()
        },
    )?;
    println!("lambda    = {:.6e} 1/s", report.params.lambda);
    println!("diffusion = {:.6e} m^2/s", report.params.diffusion);
    println!(
        "objective {:.6e} after {} evaluations, converged {}",
        report.objective, report.evaluations, report.converged
    );
    if report.on_boundary() {
        println!("warning: estimate lies on the search bounds {:?}", report.at_bound);
    }
    if !report.unidentifiable.is_empty() {
        println!("warning: not identifiable from these data: {}", report.unidentifiable.join(", "));
    }
    if let Some(out) = &a.out {
        atomic_write(out, to_json(&report)?.as_bytes())?;
    }
    Ok(())
}
