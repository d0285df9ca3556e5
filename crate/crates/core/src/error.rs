use thiserror::Error;

/// Failures raised by the oracles, solvers, integrator and analysis passes.
///
/// The variant name doubles as the machine-readable failure reason written
/// into run reports, see [`Error::reason`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("subdifferential oracle returned no element at the query point")]
    EmptySubdifferential,
    #[error("solver diverged: {0}")]
    SolverDivergence(String),
    #[error("point lies outside the prox localization ball (distance {distance}, radius {radius})")]
    OutsideLocalization { distance: f64, radius: f64 },
    #[error("mollifier support ball of radius {radius} leaves the region")]
    RegionViolation { radius: f64 },
    #[error("directional difference quotients did not settle (spread {spread:e})")]
    NonConvergentLimit { spread: f64 },
    #[error("iteration limit of {0} reached")]
    MaxIterations(usize),
    #[error("degenerate leading coefficient")]
    DegenerateCoefficient,
    #[error("energy inequality violated at t = {time} after {halvings} halvings (margin {margin:e})")]
    EnergyViolation {
        time: f64,
        halvings: usize,
        margin: f64,
    },
    #[error("trajectory left the region at t = {time}")]
    RegionExit { time: f64 },
    #[error("trajectory too short for the requested tail window")]
    EmptyTail,
    #[error("subregularity modulus is unbounded (zero residual at distance {distance:e})")]
    UnboundedModulus { distance: f64 },
    #[error("no samples fall inside the level band")]
    NoValidSamples,
    #[error("trajectory tail is not converging")]
    NonConvergent,
    #[error("duplicate problem name `{0}`")]
    DuplicateName(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable identifier of the failure kind.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::EmptySubdifferential => "EmptySubdifferential",
            Error::SolverDivergence(_) => "SolverDivergence",
            Error::OutsideLocalization { .. } => "OutsideLocalization",
            Error::RegionViolation { .. } => "RegionViolation",
            Error::NonConvergentLimit { .. } => "NonConvergentLimit",
            Error::MaxIterations(_) => "MaxIterations",
            Error::DegenerateCoefficient => "DegenerateCoefficient",
            Error::EnergyViolation { .. } => "EnergyViolation",
            Error::RegionExit { .. } => "RegionExit",
            Error::EmptyTail => "EmptyTail",
            Error::UnboundedModulus { .. } => "UnboundedModulus",
            Error::NoValidSamples => "NoValidSamples",
            Error::NonConvergent => "NonConvergent",
            Error::DuplicateName(_) => "DuplicateName",
            Error::UnknownProblem(_) => "UnknownProblem",
            Error::ConfigError(_) => "ConfigError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Toml(_) => "Toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
