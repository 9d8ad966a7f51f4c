//! The functional `E^{λω}_α`, its gradient and its Hessian action.
//!
//! Per triangle `T` with area `A`, hat-gradient matrix `G` (2×3) and vertex
//! values `U` (3×K):
//!
//! ```text
//! s      = tr(Uᵀ GᵀG U) = |∇u|²_T
//! E_α,T  = ½ A (τ + s)^α
//! ω_T    = ½ e₁ᵀ Ω(ū) e₂,   e₁ = u_b − u_a, e₂ = u_c − u_a, ū = barycenter
//! ```
//!
//! and `E = Σ E_α,T + λ τ^{α−1} Σ ω_T`. Both derivatives are exact for this
//! discrete energy; the metric gradient uses the lumped mass inner product
//! `⟨V, W⟩ = Σ_v m_v V_v·W_v` and per-vertex tangential projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{DomainMesh, Vec3};
use crate::pairwise_sum;
use crate::target::{TargetManifold, TwoFormField};

/// Discrete map: `K` ambient coordinates per domain vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct MapState {
    k: usize,
    data: Vec<f64>,
}

impl MapState {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() % k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not split into {k}-vectors",
                data.len()
            )));
        }
        Ok(Self { k, data })
    }

    pub fn constant(num_vertices: usize, point: &[f64]) -> Self {
        let mut data = Vec::with_capacity(num_vertices * point.len());
        for _ in 0..num_vertices {
            data.extend_from_slice(point);
        }
        Self { k: point.len(), data }
    }

    /// Vertex-wise evaluation without projection.
    pub fn from_fn<F>(mesh: &DomainMesh, k: usize, f: F) -> Self
    where
        F: Fn(Vec3) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity(mesh.num_vertices() * k);
        for &x in mesh.vertices() {
            let y = f(x);
            assert_eq!(y.len(), k, "map value has wrong dimension");
            data.extend_from_slice(&y);
        }
        Self { k, data }
    }

    /// Vertex-wise evaluation followed by projection onto the target.
    pub fn from_fn_projected<F>(mesh: &DomainMesh, target: &TargetManifold, f: F) -> Result<Self>
    where
        F: Fn(Vec3) -> Vec<f64>,
    {
        let mut u = Self::from_fn(mesh, target.ambient_dim(), f);
        u.project_onto(target)?;
        Ok(u)
    }

    /// Standard embedding `S² → ℝ³ × {0}` scaled to the target size and
    /// projected onto it.
    pub fn identity(mesh: &DomainMesh, target: &TargetManifold) -> Result<Self> {
        let k = target.ambient_dim();
        let r = match target.kind() {
            crate::target::TargetKind::RoundSphere { radius, .. } => *radius,
            _ => 1.0,
        };
        Self::from_fn_projected(mesh, target, |x| {
            let mut y = vec![0.0; k];
            for i in 0..3.min(k) {
                y[i] = r * x[i];
            }
            y
        })
    }

    pub fn project_onto(&mut self, target: &TargetManifold) -> Result<()> {
        if target.ambient_dim() != self.k {
            return Err(Error::DimensionMismatch("state and target dimensions differ".into()));
        }
        let k = self.k;
        self.data
            .par_chunks_mut(k)
            .map(|y| target.project_in_place(y))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn num_vertices(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn is_constant(&self, tol: f64) -> bool {
        let first = self.vertex(0);
        self.data.chunks(self.k).all(|y| y.iter().zip(first).all(|(a, b)| (a - b).abs() <= tol))
    }

    /// Largest distance defect over all vertices.
    pub fn max_defect(&self, target: &TargetManifold) -> f64 {
        self.data.chunks(self.k).map(|y| target.distance_defect(y)).fold(0.0, f64::max)
    }

    pub fn is_on(&self, target: &TargetManifold) -> bool {
        self.k == target.ambient_dim() && self.data.chunks(self.k).all(|y| target.is_on_manifold(y))
    }

    /// Largest Euclidean vertex displacement to `other`.
    pub fn sup_distance(&self, other: &MapState) -> f64 {
        self.data
            .chunks(self.k)
            .zip(other.data.chunks(self.k))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `project(u + t v)` vertex-wise.
    pub fn retract(&self, target: &TargetManifold, v: &TangentField, t: f64) -> Result<MapState> {
        let mut out = self.clone();
        for (y, d) in out.data.iter_mut().zip(&v.data) {
            *y += t * d;
        }
        out.project_onto(target)?;
        Ok(out)
    }
}

/// Per-vertex ambient vectors, tangent to the target at the base state.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    k: usize,
    data: Vec<f64>,
}

impl TangentField {
    pub fn zeros(num_vertices: usize, k: usize) -> Self {
        Self { k, data: vec![0.0; num_vertices * k] }
    }

    pub fn from_vec(k: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % k, 0);
        Self { k, data }
    }

    /// Tangential projection of arbitrary ambient vectors at `u`.
    pub fn projected(target: &TargetManifold, u: &MapState, mut data: Vec<f64>) -> Self {
        let k = u.dim();
        data.par_chunks_mut(k)
            .zip(u.as_slice().par_chunks(k))
            .for_each(|(v, y)| target.project_tangent_unchecked(y, v));
        Self { k, data }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn mass_dot(&self, mesh: &DomainMesh, other: &TangentField) -> f64 {
        mass_dot(mesh, self.k, &self.data, &other.data)
    }

    pub fn mass_norm(&self, mesh: &DomainMesh) -> f64 {
        self.mass_dot(mesh, self).sqrt()
    }

    /// Largest normal component relative to the field norm.
    pub fn max_normal_component(&self, target: &TargetManifold, u: &MapState) -> f64 {
        let mut n = vec![0.0; self.k];
        self.data
            .chunks(self.k)
            .zip(u.as_slice().chunks(self.k))
            .map(|(v, y)| {
                if target.unit_normal(y, &mut n) == 0.0 {
                    0.0
                } else {
                    v.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>().abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn mass_dot(mesh: &DomainMesh, k: usize, a: &[f64], b: &[f64]) -> f64 {
    let terms: Vec<f64> = mesh
        .vertex_area()
        .iter()
        .enumerate()
        .map(|(v, m)| {
            let mut s = 0.0;
            for i in v * k..(v + 1) * k {
                s += a[i] * b[i];
            }
            m * s
        })
        .collect();
    pairwise_sum(&terms)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalParams {
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl FunctionalParams {
    pub fn new(alpha: f64, lambda: f64, tau: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be >= 1")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidParameter(format!("tau = {tau} must be in (0, 1]")));
        }
        Ok(Self { alpha, lambda, tau })
    }

    /// Harmonic-map energy plus `λω` (`α = 1`, `τ = 1`).
    pub fn harmonic(lambda: f64) -> Self {
        Self { alpha: 1.0, lambda, tau: 1.0 }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    /// Weight of the ω-term, `λ τ^{α−1}`.
    pub fn omega_weight(&self) -> f64 {
        self.lambda * self.tau.powf(self.alpha - 1.0)
    }
}

/// Dirichlet energy `½ Σ_T |∇u|²_T A_T`.
pub fn dirichlet(mesh: &DomainMesh, u: &MapState) -> f64 {
    let dens = mesh.triangle_density(u);
    let terms: Vec<f64> = dens.iter().zip(mesh.tri_area()).map(|(d, a)| 0.5 * d * a).collect();
    pairwise_sum(&terms)
}

/// `½ Σ_T (τ + |∇u|²_T)^α A_T`.
pub fn alpha_energy(mesh: &DomainMesh, u: &MapState, p: &FunctionalParams) -> f64 {
    let dens = mesh.triangle_density(u);
    let terms: Vec<f64> = dens
        .iter()
        .zip(mesh.tri_area())
        .map(|(d, a)| 0.5 * a * (p.tau + d).powf(p.alpha))
        .collect();
    pairwise_sum(&terms)
}

/// `∫ u*ω` with `ω` evaluated at triangle barycenter images.
pub fn omega_term(mesh: &DomainMesh, u: &MapState, form: &TwoFormField) -> f64 {
    let k = u.dim();
    let data = u.as_slice();
    let terms: Vec<f64> = (0..mesh.num_triangles())
        .into_par_iter()
        .map_init(
            || Scratch::new(k, false),
            |s, t| {
                s.load(mesh, data, t);
                form.omega_into(&s.m, &mut s.om);
                0.5 * bilinear(&s.om, &s.e1, &s.e2, k)
            },
        )
        .collect();
    pairwise_sum(&terms)
}

pub fn total_energy(mesh: &DomainMesh, u: &MapState, form: &TwoFormField, p: &FunctionalParams) -> f64 {
    let w = p.omega_weight();
    let e = alpha_energy(mesh, u, p);
    if w == 0.0 || form.is_zero() {
        e
    } else {
        e + w * omega_term(mesh, u, form)
    }
}

/// A functional on a fixed mesh, target and form.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub mesh: &'a DomainMesh,
    pub target: &'a TargetManifold,
    pub form: &'a TwoFormField,
    pub params: FunctionalParams,
}

impl<'a> Problem<'a> {
    pub fn new(
        mesh: &'a DomainMesh,
        target: &'a TargetManifold,
        form: &'a TwoFormField,
        params: FunctionalParams,
    ) -> Result<Self> {
        if form.ambient_dim() != target.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "form is on R^{}, target is in R^{}",
                form.ambient_dim(),
                target.ambient_dim()
            )));
        }
        FunctionalParams::new(params.alpha, params.lambda, params.tau)?;
        Ok(Self { mesh, target, form, params })
    }

    pub fn with_params(&self, params: FunctionalParams) -> Self {
        Self { params, ..*self }
    }

    pub fn k(&self) -> usize {
        self.target.ambient_dim()
    }

    fn has_omega(&self) -> bool {
        !self.form.is_zero() && self.params.omega_weight() != 0.0
    }

    pub fn check(&self, u: &MapState) -> Result<()> {
        self.mesh.check_state(u)?;
        if u.dim() != self.k() {
            return Err(Error::DimensionMismatch("state dimension differs from target".into()));
        }
        Ok(())
    }

    pub fn energy(&self, u: &MapState) -> f64 {
        total_energy(self.mesh, u, self.form, &self.params)
    }

    pub fn alpha_energy(&self, u: &MapState) -> f64 {
        alpha_energy(self.mesh, u, &self.params)
    }

    /// `∂Ē/∂u_v` for all vertices (ambient, unprojected, not mass-scaled).
    pub fn ambient_gradient(&self, u: &MapState) -> Vec<f64> {
        let k = self.k();
        let data = u.as_slice();
        let nt = self.mesh.num_triangles();
        let with_omega = self.has_omega();
        let mut local = vec![0.0; nt * 3 * k];
        local.par_chunks_mut(3 * k).enumerate().for_each_init(
            || Scratch::new(k, false),
            |s, (t, out)| {
                s.load(self.mesh, data, t);
                self.local_gradient(s, t, with_omega, out);
            },
        );
        self.scatter(&local)
    }

    fn scatter(&self, local: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut g = vec![0.0; self.mesh.num_vertices() * k];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            for c in 0..3 {
                let src = &local[(t * 3 + c) * k..(t * 3 + c + 1) * k];
                for i in 0..k {
                    g[tri[c] * k + i] += src[i];
                }
            }
        }
        g
    }

    /// Metric gradient `G_v = P_v(∂Ē/∂u_v)/m_v`.
    pub fn gradient(&self, u: &MapState) -> TangentField {
        let amb = self.ambient_gradient(u);
        self.metric_gradient(u, amb)
    }

    pub(crate) fn metric_gradient(&self, u: &MapState, mut amb: Vec<f64>) -> TangentField {
        let k = self.k();
        let areas = self.mesh.vertex_area();
        amb.par_chunks_mut(k)
            .zip(u.as_slice().par_chunks(k))
            .enumerate()
            .for_each(|(v, (g, y))| {
                self.target.project_tangent_unchecked(y, g);
                g.iter_mut().for_each(|x| *x /= areas[v]);
            });
        TangentField::from_vec(k, amb)
    }

    pub fn grad_norm(&self, g: &TangentField) -> f64 {
        g.mass_norm(self.mesh)
    }

    /// Hessian operator at `u`; caches the ambient gradient for the
    /// curvature (Weingarten) term.
    pub fn hessian_at(&self, u: &'a MapState) -> HessianOp<'a> {
        HessianOp { problem: *self, u, amb_grad: self.ambient_gradient(u) }
    }

    /// `L(V)` with `⟨L(V), W⟩_mass = δ²E(u)(V, W)` for tangent `V, W`.
    pub fn hessian_apply(&self, u: &MapState, v: &TangentField) -> TangentField {
        let amb = self.ambient_gradient(u);
        hessian_apply_with(self, u, &amb, v)
    }

    fn local_gradient(&self, s: &mut Scratch, t: usize, with_omega: bool, out: &mut [f64]) {
        let k = s.k;
        let p = &self.params;
        let area = self.mesh.tri_area()[t];
        let phi1 = p.alpha * (p.tau + s.dens).powf(p.alpha - 1.0);
        for i in 0..3 * k {
            out[i] = area * phi1 * s.su[i];
        }
        if with_omega {
            let w = p.omega_weight();
            self.form.omega_into(&s.m, &mut s.om);
            self.form.d_omega_into(&s.m, &mut s.dom);
            omega_local_gradient(s, w, out);
        }
    }

    /// Ambient Hessian action on one triangle for local displacements `v`
    /// (3×K, row-major per local vertex), without the curvature term.
    pub(crate) fn local_hessian(&self, s: &mut Scratch, t: usize, with_omega: bool, v: &[f64], out: &mut [f64]) {
        let k = s.k;
        let p = &self.params;
        let area = self.mesh.tri_area()[t];
        let g = &self.mesh.tri_grad()[t];
        // S V
        for c in 0..3 {
            for i in 0..k {
                let mut acc = 0.0;
                for d in 0..3 {
                    let scd = g[0][c] * g[0][d] + g[1][c] * g[1][d];
                    acc += scd * v[d * k + i];
                }
                s.sv[c * k + i] = acc;
            }
        }
        let ds: f64 = 2.0 * (0..3 * k).map(|i| s.u[i] * s.sv[i]).sum::<f64>();
        let base = p.tau + s.dens;
        let phi1 = p.alpha * base.powf(p.alpha - 1.0);
        let phi2 = if p.alpha == 1.0 { 0.0 } else { p.alpha * (p.alpha - 1.0) * base.powf(p.alpha - 2.0) };
        for i in 0..3 * k {
            out[i] = area * (phi2 * ds * s.su[i] + phi1 * s.sv[i]);
        }
        if with_omega {
            omega_local_hessian(s, self.params.omega_weight(), v, out);
        }
    }

    pub(crate) fn scratch(&self, with_dd: bool) -> Scratch {
        Scratch::new(self.k(), with_dd)
    }

    pub(crate) fn load_triangle(&self, s: &mut Scratch, u: &MapState, t: usize) {
        s.load(self.mesh, u.as_slice(), t);
        if self.has_omega() {
            self.form.omega_into(&s.m, &mut s.om);
            self.form.d_omega_into(&s.m, &mut s.dom);
            if s.ddom.len() == s.k.pow(4) {
                self.form.dd_omega_into(&s.m, &mut s.ddom);
            }
        }
    }

    pub(crate) fn omega_active(&self) -> bool {
        self.has_omega()
    }
}

/// Hessian at a fixed state.
pub struct HessianOp<'a> {
    problem: Problem<'a>,
    u: &'a MapState,
    amb_grad: Vec<f64>,
}

impl<'a> HessianOp<'a> {
    pub fn apply(&self, v: &TangentField) -> TangentField {
        hessian_apply_with(&self.problem, self.u, &self.amb_grad, v)
    }

    pub fn ambient_gradient(&self) -> &[f64] {
        &self.amb_grad
    }
}

fn hessian_apply_with(pb: &Problem, u: &MapState, amb_grad: &[f64], v: &TangentField) -> TangentField {
    let k = pb.k();
    let data = u.as_slice();
    let vd = v.as_slice();
    let nt = pb.mesh.num_triangles();
    let with_omega = pb.has_omega();
    let mut local = vec![0.0; nt * 3 * k];
    local.par_chunks_mut(3 * k).enumerate().for_each_init(
        || (Scratch::new(k, with_omega), vec![0.0; 3 * k]),
        |(s, vl), (t, out)| {
            pb.load_triangle(s, u, t);
            let tri = pb.mesh.triangles()[t];
            for c in 0..3 {
                vl[c * k..(c + 1) * k].copy_from_slice(&vd[tri[c] * k..(tri[c] + 1) * k]);
            }
            pb.local_hessian(s, t, with_omega, vl, out);
        },
    );
    let mut h = pb.scatter(&local);
    let areas = pb.mesh.vertex_area();
    h.par_chunks_mut(k)
        .zip(data.par_chunks(k))
        .zip(amb_grad.par_chunks(k).zip(vd.par_chunks(k)))
        .enumerate()
        .for_each(|(i, ((hv, y), (g, vv)))| {
            pb.target.add_shape_term(y, g, vv, 1.0, hv);
            pb.target.project_tangent_unchecked(y, hv);
            hv.iter_mut().for_each(|x| *x /= areas[i]);
        });
    TangentField::from_vec(k, h)
}

/// Per-triangle working set.
pub(crate) struct Scratch {
    pub k: usize,
    pub u: Vec<f64>,
    pub su: Vec<f64>,
    pub sv: Vec<f64>,
    pub dens: f64,
    pub m: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub om: Vec<f64>,
    pub dom: Vec<f64>,
    pub ddom: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize, with_dd: bool) -> Self {
        Self {
            k,
            u: vec![0.0; 3 * k],
            su: vec![0.0; 3 * k],
            sv: vec![0.0; 3 * k],
            dens: 0.0,
            m: vec![0.0; k],
            e1: vec![0.0; k],
            e2: vec![0.0; k],
            om: vec![0.0; k * k],
            dom: vec![0.0; k * k * k],
            ddom: if with_dd { vec![0.0; k * k * k * k] } else { Vec::new() },
            tmp: vec![0.0; 6 * k],
        }
    }

    fn load(&mut self, mesh: &DomainMesh, data: &[f64], t: usize) {
        let k = self.k;
        let tri = mesh.triangles()[t];
        let g = &mesh.tri_grad()[t];
        for c in 0..3 {
            self.u[c * k..(c + 1) * k].copy_from_slice(&data[tri[c] * k..(tri[c] + 1) * k]);
        }
        let mut dens = 0.0;
        for c in 0..3 {
            for i in 0..k {
                let mut acc = 0.0;
                for d in 1..3 {
                    let scd = g[0][c] * g[0][d] + g[1][c] * g[1][d];
                    acc += scd * (self.u[d * k + i] - self.u[i]);
                }
                self.su[c * k + i] = acc;
                dens += (self.u[c * k + i] - self.u[i]) * acc;
            }
        }
        self.dens = dens.max(0.0);
        for i in 0..k {
            let (a, b, c) = (self.u[i], self.u[k + i], self.u[2 * k + i]);
            self.m[i] = (a + b + c) / 3.0;
            self.e1[i] = b - a;
            self.e2[i] = c - a;
        }
    }
}

/// `Σ_ij M_ij a^i b^j`.
fn bilinear(m: &[f64], a: &[f64], b: &[f64], k: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += m[i * k + j] * b[j];
        }
        s += a[i] * row;
    }
    s
}

fn omega_local_gradient(s: &mut Scratch, w: f64, out: &mut [f64]) {
    let k = s.k;
    let kk = k * k;
    for i in 0..k {
        let mut gb = 0.0;
        let mut gc = 0.0;
        for j in 0..k {
            gb += 0.5 * s.om[i * k + j] * s.e2[j];
            gc -= 0.5 * s.om[i * k + j] * s.e1[j];
        }
        let q = bilinear(&s.dom[i * kk..(i + 1) * kk], &s.e1, &s.e2, k) / 6.0;
        out[i] += w * (-gb - gc + q);
        out[k + i] += w * (gb + q);
        out[2 * k + i] += w * (gc + q);
    }
}

fn omega_local_hessian(s: &mut Scratch, w: f64, v: &[f64], out: &mut [f64]) {
    let k = s.k;
    let kk = k * k;
    let (de, rest) = s.tmp.split_at_mut(2 * k);
    let (de1, de2) = de.split_at_mut(k);
    let dm = &mut rest[..k];
    for i in 0..k {
        de1[i] = v[k + i] - v[i];
        de2[i] = v[2 * k + i] - v[i];
        dm[i] = (v[i] + v[k + i] + v[2 * k + i]) / 3.0;
    }
    for i in 0..k {
        // δ(Ω e₂)_i and δ(Ω e₁)_i
        let mut gb = 0.0;
        let mut gc = 0.0;
        for j in 0..k {
            let mut dom_ij = 0.0;
            for l in 0..k {
                dom_ij += dm[l] * s.dom[l * kk + i * k + j];
            }
            gb += 0.5 * (s.om[i * k + j] * de2[j] + dom_ij * s.e2[j]);
            gc -= 0.5 * (s.om[i * k + j] * de1[j] + dom_ij * s.e1[j]);
        }
        let dl = &s.dom[i * kk..(i + 1) * kk];
        let mut q = bilinear(dl, de1, &s.e2, k) + bilinear(dl, &s.e1, de2, k);
        for p in 0..k {
            if dm[p] != 0.0 {
                let base = (i * k + p) * kk;
                q += dm[p] * bilinear(&s.ddom[base..base + kk], &s.e1, &s.e2, k);
            }
        }
        q /= 6.0;
        out[i] += w * (-gb - gc + q);
        out[k + i] += w * (gb + q);
        out[2 * k + i] += w * (gc + q);
    }
}
