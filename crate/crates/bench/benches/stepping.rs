use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use thermonet::io::read_network;
use thermonet::mor::OffsetRomIntegrator;
use thermonet::network::{reduce_link_with, reduction_config, GgaOptions, HydraulicInputs};
use thermonet::{
    assemble_fom, build_grid, build_topology, evaluate_rom_at, gga_solve, FomIntegrator, NetworkModel, NetworkSimulator,
    SensorLayout, StepInputs, ThermalInputs, ThermalParameters,
};

fn three_path() -> NetworkModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/three_path.toml");
    build_topology(&read_network(&path).unwrap()).unwrap()
}

const PARAMS: ThermalParameters = ThermalParameters {
    lambda: 1e-3,
    diffusion: 1e-4,
};

fn fom_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("fom_step");
    for n in [100, 400, 1200] {
        let grid = build_grid(20.0, n).unwrap();
        let fom = assemble_fom(&grid, &PARAMS, &SensorLayout::new(vec![10.0])).unwrap();
        let mut integ = FomIntegrator::new(&fom).unwrap();
        let x = nalgebra::DVector::from_element(n, 40.0);
        let u = ThermalInputs::new(0.2, 55.0, 20.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| integ.step(black_box(&x), &u, 1.0).unwrap())
        });
    }
    group.finish();
}

fn rom_step(c: &mut Criterion) {
    let model = three_path();
    let link = &model.description.links[model.link_index("v1").unwrap()];
    let mut config = reduction_config(link);
    config.order = 7;
    let rom = reduce_link_with(link, &config).unwrap();
    let mut integ = OffsetRomIntegrator::new(&rom, evaluate_rom_at(&rom, &link.thermal.params), 40.0);
    let x = integ.uniform_state(40.0);
    let u = ThermalInputs::new(0.2, 55.0, 20.0);
    c.bench_function("rom_step_r7", |b| b.iter(|| integ.step(black_box(&x), &u, 1.0).unwrap()));
}

fn hydraulics(c: &mut Criterion) {
    let model = three_path();
    let mut inputs = HydraulicInputs::from_description(&model, 1.5e5);
    for (i, l) in model.description.links.iter().enumerate() {
        if l.hydraulic.valve.is_some() {
            inputs.valve_openings[i] = 1.0;
        }
    }
    inputs.demand_openings[0] = 1.0;
    let opts = GgaOptions::default();
    c.bench_function("gga_cold", |b| b.iter(|| gga_solve(&model, black_box(&inputs), None, &opts).unwrap()));
    let warm = gga_solve(&model, &inputs, None, &opts).unwrap().state;
    let mut nudged = inputs.clone();
    nudged.known_heads[0] *= 1.001;
    c.bench_function("gga_warm", |b| {
        b.iter(|| gga_solve(&model, black_box(&nudged), Some(&warm), &opts).unwrap())
    });
}

fn network_step(c: &mut Criterion) {
    let model = three_path();
    let n_p = model.n_links();
    let n_d = model.description.demands.len();
    let mut sim = NetworkSimulator::new(model, 40.0, Default::default()).unwrap();
    let inputs = StepInputs {
        source: 1.5e5,
        inlet_temperature: 55.0,
        ambient_temperature: 20.0,
        valve_openings: vec![1.0; n_p],
        demand_openings: vec![0.0; n_d],
    };
    c.bench_function("three_path_step", |b| b.iter(|| sim.simulate_step(black_box(&inputs), 1.0).unwrap()));
}

criterion_group!(benches, fom_step, rom_step, hydraulics, network_step);
criterion_main!(benches);
