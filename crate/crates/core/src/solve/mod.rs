//! Critical-point search: descent, Newton refinement, min-max, λ-scan and
//! α-continuation.

mod continuation;
mod descent;
mod minmax;
mod newton;

pub use continuation::{
    alpha_continuation, default_schedule, detect_concentration, BubbleReport, ContinuationOptions, ContinuationReport,
    StageReport, StageSolver,
};
pub use descent::{descend, DescentOptions};
pub use minmax::{lambda_scan, minmax_width, LambdaScanRow, MinmaxOptions, MinmaxReport, MinmaxRound, SweepoutGrid};
pub use newton::{refine_critical, NewtonOptions};

use serde::{Deserialize, Serialize};

use crate::energy::MapState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxItersExceeded,
    LineSearchStalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub state: MapState,
    pub iterations: usize,
    pub grad_norm: f64,
    pub energy: f64,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub termination: Termination,
}

impl SolveReport {
    /// Turns a non-converged run into the matching error.
    pub fn ok(self) -> Result<SolveReport> {
        match self.termination {
            Termination::Converged => Ok(self),
            Termination::MaxItersExceeded => Err(Error::MaxItersExceeded {
                iterations: self.iterations,
                grad_norm: self.grad_norm,
            }),
            Termination::LineSearchStalled => Err(Error::LineSearchStalled { grad_norm: self.grad_norm }),
        }
    }
}
