//! Numerical laboratory for prescribed-mean-curvature 2-spheres.
//!
//! Maps from a triangulated round 2-sphere into an embedded target `N ⊂ ℝ^K`
//! are evaluated against the perturbed Sacks–Uhlenbeck functional
//!
//! ```text
//! E^{λω}_α(u) = ½ ∫ (τ + |∇u|²)^α dV + λ τ^{α-1} ∫ u*ω
//! ```
//!
//! together with its exact discrete first and second variations. On top of
//! that sit projected descent, a one-parameter min-max (mountain-pass) search,
//! α ↘ 1 continuation with concentration detection, Morse-index counting and a
//! set of identity-based diagnostics (conformality, Pohozaev, balancing,
//! energy identity).
//!
//! Module map:
//! - [`target`]: target manifolds and two-forms.
//! - [`mesh`]: the icosphere domain with P1 finite elements.
//! - [`energy`]: functional values, gradient and Hessian action.
//! - [`solve`]: descent, Newton refinement, min-max, λ-scan, continuation.
//! - [`spectrum`]: Jacobi operator, Morse index, index-comparison form.
//! - [`diagnose`]: residual checks of the variational identities.
//! - [`io`]: plain-text state files and mesh export.

pub mod diagnose;
pub mod energy;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod solve;
pub mod spectrum;
pub mod target;

pub use energy::{FunctionalParams, MapState, Problem, TangentField};
pub use error::{Error, Result};
pub use mesh::DomainMesh;
pub use target::{TargetKind, TargetManifold, TwoFormField};

/// Sum with a fixed pairwise reduction tree, independent of thread count.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
