use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::newton::{refine_critical, NewtonOptions};
use crate::energy::{alpha_energy, mass_dot, omega_term, FunctionalParams, MapState, Problem, TangentField};
use crate::error::{Error, Result};
use crate::mesh::DomainMesh;
use crate::target::{TargetKind, TargetManifold, TwoFormField};

/// One-parameter family of maps with constant endpoints.
#[derive(Clone, Debug)]
pub struct SweepoutGrid {
    dimension: usize,
    params: Vec<f64>,
    states: Vec<MapState>,
}

impl SweepoutGrid {
    pub fn new(params: Vec<f64>, states: Vec<MapState>) -> Result<Self> {
        Self::with_dimension(1, params, states)
    }

    pub fn with_dimension(dimension: usize, params: Vec<f64>, states: Vec<MapState>) -> Result<Self> {
        if params.len() != states.len() {
            return Err(Error::InvalidSweepout("one state per parameter sample is required".into()));
        }
        if states.len() < 9 {
            return Err(Error::InvalidSweepout(format!("{} samples, at least 9 required", states.len())));
        }
        if params.windows(2).any(|w| w[1] <= w[0]) || params[0] < 0.0 || *params.last().unwrap() > 1.0 {
            return Err(Error::InvalidSweepout("parameters must increase within [0, 1]".into()));
        }
        let (k, nv) = (states[0].dim(), states[0].num_vertices());
        if states.iter().any(|s| s.dim() != k || s.num_vertices() != nv) {
            return Err(Error::InvalidSweepout("states differ in shape".into()));
        }
        let scale = states.iter().flat_map(|s| s.as_slice()).fold(1.0f64, |a, b| a.max(b.abs()));
        let tol = 1e-12 * scale;
        if !states[0].is_constant(tol) || !states.last().unwrap().is_constant(tol) {
            return Err(Error::InvalidSweepout("endpoint states must be constant maps".into()));
        }
        if states.iter().all(|s| s.is_constant(tol)) {
            return Err(Error::InvalidSweepout("all states are constant (degenerate family)".into()));
        }
        Ok(Self { dimension, params, states })
    }

    /// Latitude family: for 3- and 4-dimensional spheres and ellipsoids
    /// `σ(t)(x) = a ⊙ (sin(πt)·x, cos(πt), 0…)`; for flat targets the
    /// concentric round spheres `r_max·sin(πt)·x`.
    pub fn latitude(mesh: &DomainMesh, target: &TargetManifold, samples: usize, r_max: f64) -> Result<Self> {
        let k = target.ambient_dim();
        let axes: Option<Vec<f64>> = match target.kind() {
            TargetKind::RoundSphere { n, radius } if *n >= 3 => Some(vec![*radius; k]),
            TargetKind::Ellipsoid { semiaxes } if semiaxes.len() >= 4 => Some(semiaxes.clone()),
            TargetKind::FlatEuclidean { .. } | TargetKind::FlatTorus { .. } => None,
            _ => {
                return Err(Error::InvalidParameter(
                    "latitude sweepouts need a target of dimension >= 3".into(),
                ))
            }
        };
        if samples < 9 {
            return Err(Error::InvalidSweepout(format!("{samples} samples, at least 9 required")));
        }
        let params: Vec<f64> = (0..samples).map(|i| i as f64 / (samples - 1) as f64).collect();
        let mut states = Vec::with_capacity(samples);
        for &t in &params {
            let (s, c) = if t == 1.0 { (0.0, -1.0) } else if t == 0.0 { (0.0, 1.0) } else { (std::f64::consts::PI * t).sin_cos() };
            let u = match &axes {
                Some(a) => MapState::from_fn(mesh, k, |x| {
                    let mut y = vec![0.0; k];
                    for i in 0..3 {
                        y[i] = a[i] * s * x[i];
                    }
                    y[3] = a[3] * c;
                    y
                }),
                None => MapState::from_fn(mesh, k, |x| {
                    let mut y = vec![0.0; k];
                    for i in 0..3 {
                        y[i] = r_max * s * x[i];
                    }
                    y
                }),
            };
            states.push(u);
        }
        Self::new(params, states)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn states(&self) -> &[MapState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinmaxOptions {
    /// Relaxation rounds (the budget).
    pub max_rounds: usize,
    /// Bounded descent steps per interior sample per round.
    pub steps_per_sample: usize,
    /// Move the maximal sample uphill along the path (climbing image).
    pub climb: bool,
    pub reparametrize: bool,
    /// Stop once the maximal sample's gradient norm is below this.
    pub tol_grad: f64,
    /// Largest per-vertex displacement of a step, in target length units.
    pub max_step: f64,
    /// Newton refinement of the maximal sample after relaxation.
    pub refine: bool,
    pub newton: NewtonOptions,
}

impl Default for MinmaxOptions {
    fn default() -> Self {
        Self {
            max_rounds: 60,
            steps_per_sample: 2,
            climb: true,
            reparametrize: true,
            tol_grad: 1e-6,
            max_step: 0.05,
            refine: true,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinmaxRound {
    pub round: usize,
    pub width: f64,
    pub argmax: usize,
    pub grad_norm_at_max: f64,
}

#[derive(Clone, Debug)]
pub struct MinmaxReport {
    /// Final `max_t E(σ(t))` over the relaxed family.
    pub width: f64,
    pub argmax: usize,
    /// State at the maximal sample, Newton-refined when that converged.
    pub critical: MapState,
    pub critical_energy: f64,
    pub critical_grad_norm: f64,
    pub refined: bool,
    pub rounds: Vec<MinmaxRound>,
    pub budget_exhausted: bool,
    pub sweepout: SweepoutGrid,
}

/// Relaxes a one-parameter family toward a minimal-maximum path (string
/// method with a climbing image) and reports the max along it.
///
/// Interior samples take bounded Armijo steps along the gradient component
/// normal to the path; the maximal sample (lowest index on ties) moves along
/// `−G + 2⟨G, τ⟩τ`. Endpoints stay frozen. After each round interior samples
/// are redistributed to equal mass-norm arclength on each side of the
/// maximal sample.
pub fn minmax_width(pb: &Problem, sweepout: &SweepoutGrid, opts: &MinmaxOptions) -> Result<MinmaxReport> {
    if sweepout.dimension() != 1 {
        return Err(Error::InvalidSweepout(format!(
            "{}-parameter sweepouts are not supported",
            sweepout.dimension()
        )));
    }
    for s in sweepout.states() {
        pb.check(s)?;
    }
    let k = pb.k();
    let mesh = pb.mesh;
    let m = sweepout.len();
    let cap = opts.max_step * pb.target.length_scale();
    let mut states: Vec<MapState> = sweepout.states().to_vec();
    for s in states.iter_mut() {
        s.project_onto(pb.target)?;
    }
    let mut params = sweepout.params().to_vec();
    let mut energies: Vec<f64> = states.par_iter().map(|s| pb.energy(s)).collect();
    let mut steps = vec![f64::INFINITY; m];
    let mut rounds = Vec::new();
    let mut budget_exhausted = true;
    let mut imax = argmax(&energies);
    for round in 0..opts.max_rounds {
        imax = argmax(&energies);
        let tangents: Vec<Option<Vec<f64>>> = (0..m)
            .map(|i| {
                if i == 0 || i == m - 1 {
                    return None;
                }
                let mut t: Vec<f64> = states[i + 1]
                    .as_slice()
                    .iter()
                    .zip(states[i - 1].as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                for (x, y) in t.chunks_mut(k).zip(states[i].as_slice().chunks(k)) {
                    pb.target.project_tangent_unchecked(y, x);
                }
                let n = mass_dot(mesh, k, &t, &t).sqrt();
                if n > 0.0 {
                    t.iter_mut().for_each(|x| *x /= n);
                    Some(t)
                } else {
                    None
                }
            })
            .collect();
        let climbing = opts.climb && imax != 0 && imax != m - 1;
        let updated: Vec<(MapState, f64, f64, f64)> = (1..m - 1)
            .into_par_iter()
            .map(|i| {
                let mut u = states[i].clone();
                let mut e = energies[i];
                let mut t0 = steps[i];
                let mut gn = 0.0;
                for _ in 0..opts.steps_per_sample.max(1) {
                    let g = pb.gradient(&u);
                    gn = pb.grad_norm(&g);
                    let mut d: Vec<f64> = g.as_slice().iter().map(|x| -x).collect();
                    if let Some(tau) = &tangents[i] {
                        let c = mass_dot(mesh, k, g.as_slice(), tau);
                        let sign = if climbing && i == imax { 2.0 } else { 1.0 };
                        d.iter_mut().zip(tau).for_each(|(x, t)| *x += sign * c * t);
                    }
                    let dmax = d.chunks(k).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
                    if dmax == 0.0 {
                        break;
                    }
                    let dir = TangentField::from_vec(k, d);
                    let slope = -mass_dot(mesh, k, dir.as_slice(), dir.as_slice());
                    let mut t = (2.0 * t0).min(cap / dmax);
                    if climbing && i == imax {
                        // no monotone merit along the climbing direction
                        t = t0.min(cap / dmax);
                        if !t.is_finite() {
                            t = cap / dmax;
                        }
                        match u.retract(pb.target, &dir, t) {
                            Ok(un) => {
                                let gnew = pb.grad_norm(&pb.gradient(&un));
                                if gnew <= 2.0 * gn {
                                    e = pb.energy(&un);
                                    u = un;
                                    t0 = t;
                                } else {
                                    t0 = 0.5 * t;
                                }
                            }
                            Err(_) => t0 = 0.5 * t,
                        }
                        continue;
                    }
                    let mut accepted = false;
                    for _ in 0..40 {
                        if let Ok(un) = u.retract(pb.target, &dir, t) {
                            let en = pb.energy(&un);
                            if en <= e + 1e-4 * t * slope {
                                u = un;
                                e = en;
                                accepted = true;
                                break;
                            }
                        }
                        t *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                    t0 = t;
                }
                (u, e, t0, gn)
            })
            .collect();
        for (j, (u, e, t, _)) in updated.into_iter().enumerate() {
            states[j + 1] = u;
            energies[j + 1] = e;
            steps[j + 1] = t;
        }
        if opts.reparametrize {
            let pivot = if climbing { Some(imax) } else { None };
            reparametrize(pb, &mut states, &mut params, pivot)?;
            energies = states.par_iter().map(|s| pb.energy(s)).collect();
        }
        imax = argmax(&energies);
        let gmax = pb.grad_norm(&pb.gradient(&states[imax]));
        rounds.push(MinmaxRound { round, width: energies[imax], argmax: imax, grad_norm_at_max: gmax });
        if gmax <= opts.tol_grad {
            budget_exhausted = false;
            break;
        }
    }
    let width = energies[imax];
    let mut critical = states[imax].clone();
    let mut critical_grad_norm = pb.grad_norm(&pb.gradient(&critical));
    let mut critical_energy = width;
    let mut refined = false;
    if opts.refine && critical_grad_norm > opts.newton.tol_grad {
        let r = refine_critical(pb, &critical, &opts.newton)?;
        if r.converged {
            critical = r.state;
            critical_grad_norm = r.grad_norm;
            critical_energy = r.energy;
            refined = true;
        }
    }
    if critical_grad_norm <= opts.tol_grad {
        budget_exhausted = false;
    }
    Ok(MinmaxReport {
        width,
        argmax: imax,
        critical,
        critical_energy,
        critical_grad_norm,
        refined,
        rounds,
        budget_exhausted,
        sweepout: SweepoutGrid { dimension: 1, params, states },
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn reparametrize(pb: &Problem, states: &mut [MapState], params: &mut [f64], pivot: Option<usize>) -> Result<()> {
    let m = states.len();
    let k = pb.k();
    match pivot {
        Some(p) => {
            redistribute(pb, states, params, 0, p, k)?;
            redistribute(pb, states, params, p, m - 1, k)
        }
        None => redistribute(pb, states, params, 0, m - 1, k),
    }
}

/// Equal-arclength redistribution of the samples strictly between `a` and `b`.
fn redistribute(pb: &Problem, states: &mut [MapState], params: &mut [f64], a: usize, b: usize, k: usize) -> Result<()> {
    if b <= a + 1 {
        return Ok(());
    }
    let mut cum = vec![0.0; b - a + 1];
    for i in a..b {
        let d: Vec<f64> = states[i + 1].as_slice().iter().zip(states[i].as_slice()).map(|(x, y)| x - y).collect();
        cum[i - a + 1] = cum[i - a] + mass_dot(pb.mesh, k, &d, &d).sqrt();
    }
    let total = cum[b - a];
    if total == 0.0 {
        return Ok(());
    }
    let old: Vec<MapState> = states[a..=b].to_vec();
    let old_params: Vec<f64> = params[a..=b].to_vec();
    for j in 1..(b - a) {
        let s = total * j as f64 / (b - a) as f64;
        let seg = (0..b - a).find(|&q| cum[q + 1] >= s).unwrap_or(b - a - 1);
        let len = cum[seg + 1] - cum[seg];
        let w = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let data: Vec<f64> = old[seg]
            .as_slice()
            .iter()
            .zip(old[seg + 1].as_slice())
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect();
        let mut u = MapState::new(k, data)?;
        u.project_onto(pb.target)?;
        states[a + j] = u;
        params[a + j] = (1.0 - w) * old_params[seg] + w * old_params[seg + 1];
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScanRow {
    pub alpha: f64,
    pub lambda: f64,
    /// `max_t E^{λω}_α(σ(t))` over the frozen family.
    pub width: f64,
    /// `width / λ`.
    pub ratio: f64,
    pub argmax: usize,
}

/// Width surrogate over a frozen family for every `(α, λ)` pair.
///
/// Each sample's `E_α` and `∫u*ω` are computed once per `α`, so `width/λ` is
/// a maximum of functions `E_α/λ + τ^{α−1}∫u*ω`, each non-increasing in `λ`.
pub fn lambda_scan(
    mesh: &DomainMesh,
    target: &TargetManifold,
    form: &TwoFormField,
    family: &[MapState],
    alphas: &[f64],
    lambdas: &[f64],
    tau: f64,
) -> Result<Vec<LambdaScanRow>> {
    if family.is_empty() {
        return Err(Error::InvalidSweepout("empty family".into()));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("lambda values must be positive and increasing".into()));
    }
    if form.ambient_dim() != target.ambient_dim() {
        return Err(Error::DimensionMismatch("form and target dimensions differ".into()));
    }
    for u in family {
        mesh.check_state(u)?;
    }
    let omegas: Vec<f64> = family.par_iter().map(|u| omega_term(mesh, u, form)).collect();
    let mut rows = Vec::with_capacity(alphas.len() * lambdas.len());
    for &alpha in alphas {
        let p = FunctionalParams::new(alpha, 0.0, tau)?;
        let ea: Vec<f64> = family.par_iter().map(|u| alpha_energy(mesh, u, &p)).collect();
        let tw = tau.powf(alpha - 1.0);
        for &lambda in lambdas {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, (e, w)) in ea.iter().zip(&omegas).enumerate() {
                let val = e + lambda * tw * w;
                if val > best.1 {
                    best = (i, val);
                }
            }
            rows.push(LambdaScanRow { alpha, lambda, width: best.1, ratio: best.1 / lambda, argmax: best.0 });
        }
    }
    Ok(rows)
}
