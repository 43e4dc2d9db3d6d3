//! Thermal-hydraulic simulation of water pipe networks.
//!
//! Every pipe carries a spatially resolved temperature model: a bilinear
//! full-order model from the method of lines ([`fom`]) or a parametric
//! reduced-order model obtained by H2-optimal Petrov-Galerkin projection
//! ([`mor`]). Flows and pressures come from a Global Gradient Algorithm solve
//! of the network ([`network`]) using the pipe resistance laws in
//! [`hydraulics`]. File formats and error metrics live in [`io`].

pub mod error;
pub mod fom;
pub mod hydraulics;
pub mod io;
pub mod mor;
pub mod network;
pub mod sparse;

pub use error::{Error, Result};
pub use fom::{
    assemble_fom, build_grid, BilinearFom, FomIntegrator, Grid, PipeGeometry, SensorLayout, ThermalInputs,
    ThermalParameters,
};
pub use hydraulics::{DemandPoint, FluidProperties, HydraulicLink, Valve};
pub use mor::{
    decouple_parameters, evaluate_rom_at, fit_parameters, h2_reduce, project, solve_generalized_lyapunov, ParametricFactors,
    ProjectionBasis, ReducedModel, ReductionConfig,
};
pub use network::{build_topology, gga_solve, run_scenario, NetworkDescription, NetworkModel, NetworkSimulator, Scenario, StepInputs};
