use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("spectral condition violated: {0}")]
    Spectral(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("ill-conditioned projection: cond(W^T V) = {condition:.3e}")]
    Projection { condition: f64 },

    #[error("hydraulic solver did not converge after {iterations} iterations (mass residual {mass_residual:.3e}, energy residual {energy_residual:.3e})")]
    HydraulicNonConvergence {
        iterations: usize,
        mass_residual: f64,
        energy_residual: f64,
    },

    #[error("singular hydraulic system near nodes [{}]", nodes.join(", "))]
    Structural { nodes: Vec<String> },

    #[error("flow reversal on link '{link}' (velocity {velocity:.3e} m/s)")]
    FlowReversal { link: String, velocity: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {file}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        file: String,
        line: Option<usize>,
        message: String,
    },

    #[error("parameter fit failed: {0}")]
    Fit(String),

    #[error("at t = {time} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps the error with the simulation time it occurred at.
    pub fn at_time(self, time: f64) -> Self {
        Error::AtTime {
            time,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping time-stamp wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Singular(_)
                | Error::Spectral(_)
                | Error::Convergence { .. }
                | Error::Projection { .. }
                | Error::HydraulicNonConvergence { .. }
                | Error::Structural { .. }
                | Error::FlowReversal { .. }
                | Error::Fit(_)
        )
    }

    pub fn is_parse(&self) -> bool {
        matches!(self.root(), Error::Parse { .. })
    }
}
