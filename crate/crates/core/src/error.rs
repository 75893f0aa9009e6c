use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty target set")]
    EmptyTargets,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate point set")]
    DegeneratePoints,
    #[error("open mesh")]
    OpenMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("inconsistent schedule")]
    InconsistentSchedule,
    #[error("denoiser diverged")]
    DenoiserDiverged,
    #[error("simulation diverged")]
    SimulationDiverged,
    #[error("label exhausted: {0}")]
    LabelExhausted(&'static str),
    #[error("scene lacks collision-free grasp")]
    NoCollisionFreeGrasp,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged at step {step}: {what}")]
    TrainingDiverged { step: u64, what: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
