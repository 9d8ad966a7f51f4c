use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is outside the tubular neighborhood (distance {distance:.3e} >= {radius:.3e})")]
    OutsideTubularNeighborhood { distance: f64, radius: f64 },
    #[error("point is off the target manifold (defect {defect:.3e})")]
    PointOffManifold { defect: f64 },
    #[error("subdivision level {0} is outside [0, 8]")]
    SubdivisionOutOfRange(u32),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("iteration limit reached after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    MaxItersExceeded { iterations: usize, grad_norm: f64 },
    #[error("min-max budget exhausted")]
    BudgetExhausted,
    #[error("line search stalled at gradient norm {grad_norm:.3e}")]
    LineSearchStalled { grad_norm: f64 },
    #[error("invalid sweepout: {0}")]
    InvalidSweepout(String),
    #[error("eigen solver failure: {0}")]
    EigSolverFailure(String),
    #[error("target is {0}-dimensional; a 3-dimensional target is required")]
    TargetNotThreeDimensional(usize),
    #[error("degenerate immersion: {flagged} of {total} vertices flagged as branch points")]
    DegenerateImmersion { flagged: usize, total: usize },
    #[error("radius {0} is outside the conformal chart (must be in (0, pi/2])")]
    RadiusOutOfChart(f64),
    #[error("no continuation data")]
    NoContinuationData,
    #[error("format error: {0}")]
    FormatError(String),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
