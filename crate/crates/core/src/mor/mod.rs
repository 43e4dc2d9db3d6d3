//! Parametric model order reduction of the pipe model.

pub mod dense;
pub mod factors;
pub mod fit;
pub mod h2;
pub mod lyapunov;
pub mod rom;

pub use factors::{decouple_parameters, ParameterMaps, ParametricFactors};
pub use fit::{fit_parameters, FitBounds, FitOptions, FitReport, FitScenario};
pub use h2::{h2_reduce, ProjectionBasis, ReductionConfig};
pub use lyapunov::{solve_generalized_lyapunov, Gramian, GramianKind, LyapunovOptions};
pub use rom::{evaluate_rom_at, project, step_rom, OffsetRomIntegrator, ReducedModel, RomAtParameter, RomIntegrator};
