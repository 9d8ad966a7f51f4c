use serde::{Deserialize, Serialize};

use super::descent::{descend, DescentOptions};
use super::newton::{refine_critical, NewtonOptions};
use super::SolveReport;
use crate::energy::{dirichlet, MapState, Problem};
use crate::error::{Error, Result};
use crate::mesh::{dot3, geodesic, normalize, scale, sub, DomainMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSolver {
    /// Warm-started descent (follows minimizers).
    Descent,
    /// Warm-started Newton refinement (follows saddle points).
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationOptions {
    pub solver: StageSolver,
    pub descent: DescentOptions,
    pub newton: NewtonOptions,
    /// Concentration is flagged when max/median vertex density exceeds this.
    pub conc_factor: f64,
    /// Bubble region is the geodesic disk of radius `2·atan(R·tan(λ_α/2))`
    /// about the concentration vertex, i.e. `|x| ≤ R` in bubble coordinates.
    pub bubble_radius: f64,
    /// Subdivision level of the mesh that carries the rescaled bubble.
    pub bubble_subdivisions: u32,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            solver: StageSolver::Descent,
            descent: DescentOptions::default(),
            newton: NewtonOptions::default(),
            conc_factor: 50.0,
            bubble_radius: 10.0,
            bubble_subdivisions: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BubbleReport {
    pub stage: usize,
    pub alpha: f64,
    pub vertex: usize,
    /// `1 / max_T |∇u|`.
    pub lambda_alpha: f64,
    /// `λ_α^{2−2α}`.
    pub mu: f64,
    /// `λ_α^{−√(α−1)}`.
    pub nu: f64,
    /// Dirichlet energy of the rescaled map on `|x| ≤ R`.
    pub bubble_energy: f64,
    /// Dirichlet energy of the stage state outside the bubble region.
    pub base_energy: f64,
    /// `√(E(w)/π)·log ν`, clamped at 0.
    pub neck_length: f64,
    #[serde(skip)]
    pub bubble: MapState,
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub alpha: f64,
    pub solve: SolveReport,
    /// `½ Σ (τ + |∇u|²)^α A`.
    pub alpha_energy: f64,
    pub dirichlet: f64,
    /// Max/median vertex density.
    pub density_ratio: f64,
    /// Sup distance to the previous stage's state.
    pub c0_change: Option<f64>,
    pub bubbles: Vec<BubbleReport>,
}

#[derive(Clone, Debug)]
pub struct ContinuationReport {
    pub stages: Vec<StageReport>,
    /// Area of the domain mesh.
    pub area: f64,
}

impl ContinuationReport {
    pub fn last(&self) -> Option<&StageReport> {
        self.stages.last()
    }

    pub fn bubbles(&self) -> impl Iterator<Item = &BubbleReport> {
        self.stages.iter().flat_map(|s| s.bubbles.iter())
    }
}

/// `1 + 2^{−j}` for `j = 1..=n`.
pub fn default_schedule(n: usize) -> Vec<f64> {
    (1..=n).map(|j| 1.0 + 0.5f64.powi(j as i32)).collect()
}

/// Vertex of maximal density and the max/median ratio; the vertex is
/// returned only when the ratio exceeds `conc_factor`.
pub fn detect_concentration(mesh: &DomainMesh, u: &MapState, conc_factor: f64) -> (Option<usize>, f64) {
    let dens = mesh.vertex_density(u);
    let mut vmax = 0;
    for (i, &d) in dens.iter().enumerate() {
        if d > dens[vmax] {
            vmax = i;
        }
    }
    let mut sorted = dens.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let ratio = if median > 0.0 {
        dens[vmax] / median
    } else if dens[vmax] > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    ((ratio > conc_factor).then_some(vmax), ratio)
}

/// Warm-started solves along a decreasing α schedule with concentration
/// detection and blow-up bookkeeping after every stage.
pub fn alpha_continuation(
    pb: &Problem,
    u0: &MapState,
    schedule: &[f64],
    opts: &ContinuationOptions,
) -> Result<ContinuationReport> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty α schedule".into()));
    }
    if schedule[0] > 1.5 || schedule.iter().any(|a| *a < 1.0) || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "α schedule must decrease strictly within [1, 1.5]".into(),
        ));
    }
    if !(opts.conc_factor > 1.0) || !(opts.bubble_radius > 0.0) {
        return Err(Error::InvalidParameter("conc_factor must exceed 1 and bubble_radius be positive".into()));
    }
    pb.check(u0)?;
    let fresh = DomainMesh::icosphere(opts.bubble_subdivisions)?;
    let mut u = u0.clone();
    let mut stages: Vec<StageReport> = Vec::with_capacity(schedule.len());
    for (i, &alpha) in schedule.iter().enumerate() {
        let stage = pb.with_params(pb.params.with_alpha(alpha));
        let solve = match opts.solver {
            StageSolver::Descent => descend(&stage, &u, &opts.descent)?,
            StageSolver::Newton => refine_critical(&stage, &u, &opts.newton)?,
        };
        let c0_change = (i > 0).then(|| solve.state.sup_distance(&u));
        u = solve.state.clone();
        let (conc, density_ratio) = detect_concentration(pb.mesh, &u, opts.conc_factor);
        let mut bubbles = Vec::new();
        if let Some(v) = conc {
            bubbles.push(bubble_at(&stage, &u, v, i, &fresh, opts)?);
        }
        stages.push(StageReport {
            alpha,
            alpha_energy: stage.alpha_energy(&u),
            dirichlet: dirichlet(pb.mesh, &u),
            density_ratio,
            c0_change,
            bubbles,
            solve,
        });
    }
    Ok(ContinuationReport { stages, area: pb.mesh.total_area() })
}

fn bubble_at(
    pb: &Problem,
    u: &MapState,
    vertex: usize,
    stage: usize,
    fresh: &DomainMesh,
    opts: &ContinuationOptions,
) -> Result<BubbleReport> {
    let mesh = pb.mesh;
    let alpha = pb.params.alpha;
    let smax = mesh.triangle_density(u).into_iter().fold(0.0, f64::max);
    // the concentration scale never exceeds the unit domain scale
    let lambda_alpha = (1.0 / smax.sqrt()).min(1.0);
    let mu = lambda_alpha.powf(2.0 - 2.0 * alpha);
    let nu = lambda_alpha.powf(-(alpha - 1.0).sqrt());
    let center = mesh.vertices()[vertex];
    let zoom = (0.5 * lambda_alpha).tan();
    let bubble = mobius_zoom(mesh, u, center, zoom, fresh, pb)?;
    let cap = 2.0 * opts.bubble_radius.atan();
    let bubble_energy = fresh.annulus_energy_about(&bubble, center, 0.0, cap);
    let r_orig = 2.0 * (opts.bubble_radius * zoom).atan();
    let base_energy = mesh.annulus_energy_about(u, center, r_orig, std::f64::consts::PI);
    let neck_length = ((bubble_energy / std::f64::consts::PI).sqrt() * nu.ln()).max(0.0);
    Ok(BubbleReport {
        stage,
        alpha,
        vertex,
        lambda_alpha,
        mu,
        nu,
        bubble_energy,
        base_energy,
        neck_length,
        bubble,
    })
}

/// `w(x) = u(Φ(x))` with `Φ` the dilation about `center` taking geodesic
/// radius `r'` to `2·atan(k·tan(r'/2))`, resampled on `fresh`.
fn mobius_zoom(
    mesh: &DomainMesh,
    u: &MapState,
    center: [f64; 3],
    k: f64,
    fresh: &DomainMesh,
    pb: &Problem,
) -> Result<MapState> {
    let dim = u.dim();
    let mut data = vec![0.0; fresh.num_vertices() * dim];
    let mut hint = 0;
    for (x, out) in fresh.vertices().iter().zip(data.chunks_mut(dim)) {
        let c = dot3(*x, center);
        let perp = sub(*x, scale(center, c));
        let p = if dot3(perp, perp) < 1e-28 {
            *x
        } else {
            let e = normalize(perp);
            let r = 2.0 * (k * (0.5 * geodesic(*x, center)).tan()).atan();
            let (s, co) = r.sin_cos();
            [co * center[0] + s * e[0], co * center[1] + s * e[1], co * center[2] + s * e[2]]
        };
        mesh.interpolate(u.as_slice(), dim, p, &mut hint, out);
    }
    let mut w = MapState::new(dim, data)?;
    w.project_onto(pb.target)?;
    Ok(w)
}
