use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("subdivision level {level} exceeds the limit of {max}")]
    Capacity { level: usize, max: usize },

    #[error("degenerate face {face}: area {area:e}")]
    DegenerateFace { face: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    Topology(String),

    #[error("point {norm:e} from the origin lies outside the tubular neighborhood (radius > {min_norm})")]
    OutsideTube { norm: f64, min_norm: f64 },

    #[error("map value at vertex {vertex} is off the target (|u| - 1 = {defect:e})")]
    OffTarget { vertex: usize, defect: f64 },

    #[error("maps are {distance:.4} apart, locality bound is {bound}; subdivide the step")]
    Locality { distance: f64, bound: f64 },

    #[error("fields live on different meshes")]
    MeshMismatch,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sweepout degree changed from {before} to {after}")]
    DegreeChanged { before: i64, after: i64 },

    #[error("no concentration: ball energy at the largest admissible radius is {reached:e}, below {target:e}")]
    NoConcentration { target: f64, reached: f64 },

    #[error("eigen-iteration did not converge: max residual {residual:e} after {iterations} steps")]
    EigenNonConvergence { residual: f64, iterations: usize },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("projection pole is hit by vertex {vertex}; enable auto-rotation")]
    PoleHit { vertex: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
