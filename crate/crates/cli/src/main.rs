//! `thermonet` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for malformed command lines (clap uses the same value).
const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "thermonet", version, about = "Thermal-hydraulic simulation of water pipe networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the full-order thermal model of one link and summarize it.
    BuildFom {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        link: String,
        /// Write the sparse system matrices as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute and store a reduced thermal model of one link.
    Reduce(ReduceArgs),
    /// Run a scenario through the network.
    Simulate(SimulateArgs),
    /// Solve the hydraulic state for one set of boundary values and controls.
    Hydraulics(HydraulicsArgs),
    /// Error metrics between two results files.
    Compare {
        reference: PathBuf,
        predicted: PathBuf,
        /// Only compare columns starting with this prefix, e.g. `Ts:`.
        #[arg(long)]
        columns: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the heat-loss and diffusion coefficients of one link to measurements.
    Fit(FitArgs),
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    link: String,
    /// Reduced order; defaults to the link's configured order.
    #[arg(long)]
    order: Option<usize>,
    /// Heat-loss coefficient (1/s) of the reference point.
    #[arg(long)]
    lambda: Option<f64>,
    /// Axial diffusion (m^2/s) of the reference point.
    #[arg(long)]
    diffusion: Option<f64>,
    /// Velocity (m/s) folded into the linear part.
    #[arg(long)]
    reference_velocity: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed of the restart perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelChoice {
    Fom,
    Rom,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use this model kind for every link instead of the per-link setting.
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Stored reduced model for a link, `LINK=PATH`; repeatable.
    #[arg(long = "rom", value_parser = parse_rom_arg)]
    roms: Vec<(String, PathBuf)>,
    /// Time step (s); must match the scenario grid.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Uniform initial temperature (degC); defaults to the first ambient value.
    #[arg(long)]
    initial_temperature: Option<f64>,
    /// Start every hydraulic solve from the cold-start guess.
    #[arg(long)]
    cold_start: bool,
}

#[derive(Args)]
struct HydraulicsArgs {
    #[arg(long)]
    network: PathBuf,
    /// Source head (bar) or, for flow-fed networks, source flow (l/min).
    #[arg(long)]
    source: f64,
    /// Valve signal, `LINK=U`; repeatable.
    #[arg(long = "valve", value_parser = parse_signal)]
    valves: Vec<(String, f64)>,
    /// Tap signal, `NODE=U`; repeatable.
    #[arg(long = "demand", value_parser = parse_signal)]
    demands: Vec<(String, f64)>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    link: String,
    /// Scenario the measurements were taken under.
    #[arg(long)]
    scenario: PathBuf,
    /// Results-format file with the link's flow, upstream node temperature
    /// and sensor columns.
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_parser = parse_range, default_value = "0,0.01")]
    lambda_bounds: (f64, f64),
    #[arg(long, value_parser = parse_range, default_value = "0,0.01")]
    diffusion_bounds: (f64, f64),
    #[arg(long)]
    initial_temperature: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rom_arg(s: &str) -> Result<(String, PathBuf), String> {
    let (link, path) = s.split_once('=').ok_or("expected LINK=PATH")?;
    Ok((link.to_string(), PathBuf::from(path)))
}

fn parse_signal(s: &str) -> Result<(String, f64), String> {
    let (id, u) = s.split_once('=').ok_or("expected ID=VALUE")?;
    let u: f64 = u.parse().map_err(|_| format!("'{u}' is not a number"))?;
    if !(0.0..=1.0).contains(&u) {
        return Err(format!("signal {u} outside [0, 1]"));
    }
    Ok((id.to_string(), u))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("'{lo}' is not a number"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("'{hi}' is not a number"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::BuildFom { network, link, out } => commands::build_fom(&network, &link, out.as_deref()),
        Command::Reduce(a) => commands::reduce(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Hydraulics(a) => commands::hydraulics(a),
        Command::Compare {
            reference,
            predicted,
            columns,
            out,
        } => commands::compare(&reference, &predicted, columns.as_deref(), out.as_deref()),
        Command::Fit(a) => commands::fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_parse() {
                EXIT_PARSE
            } else if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_OTHER
            })
        }
    }
}
