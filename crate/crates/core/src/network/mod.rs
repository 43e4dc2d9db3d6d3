//! Network graph, hydraulic solve and coupled thermal time stepping.

pub mod gga;
pub mod sim;
pub mod topology;

pub use gga::{assemble_app, gga_solve, GgaOptions, GgaSolution, HydraulicInputs, HydraulicState};
pub use sim::{
    mix_node_temperatures, reduce_link, reduce_link_with, reduce_links, reduction_config, run_scenario, run_scenario_with, NetworkSimulator, Scenario, SimOptions,
    SimStats, StepInputs, StepRecord,
};
pub use topology::{
    build_topology, LinkModelKind, LinkSpec, LinkThermal, NetworkDescription, NetworkModel, NodeKind, NodeSpec, SourceMode,
};
