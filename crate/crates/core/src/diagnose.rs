//! Residual checks of the conformality, Pohozaev, balancing and energy
//! identities at (near-)critical states.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{MapState, Problem};
use crate::error::{Error, Result};
use crate::mesh::{cross, dot3, normalize, scale, sub, DomainMesh, Vec3};
use crate::pairwise_sum;
use crate::solve::ContinuationReport;

/// `Ψ_α(r) = (α(1+r)^{α−1} r − (1+r)^α + 1)/(α−1)`, evaluated as
/// `r·e^{εL} − expm1(εL)/ε` with `ε = α−1`, `L = log1p(r)`; `r − log(1+r)`
/// when `ε < 1e−8`.
pub fn psi_alpha(alpha: f64, r: f64) -> f64 {
    let eps = alpha - 1.0;
    let l = r.ln_1p();
    if eps < 1e-8 {
        return r - l;
    }
    let x = eps * l;
    r * x.exp() - x.exp_m1() / eps
}

/// Area-weighted L² norms over triangles of the Hopf modulus
/// `|(|u_x|²−|u_y|²) − 2i⟨u_x,u_y⟩|` and of the same modulus divided by
/// `|∇u|²` (zero where `∇u = 0`). Both are invariant under frame rotation.
pub fn conformality(mesh: &DomainMesh, u: &MapState) -> Result<(f64, f64)> {
    mesh.check_state(u)?;
    let k = u.dim();
    let data = u.as_slice();
    let terms: Vec<(f64, f64)> = (0..mesh.num_triangles())
        .into_par_iter()
        .map_init(
            || (vec![0.0; k], vec![0.0; k]),
            |(r1, r2), t| {
                mesh.grad_rows(t, data, k, r1, r2);
                let a: f64 = r1.iter().map(|x| x * x).sum::<f64>() - r2.iter().map(|x| x * x).sum::<f64>();
                let b: f64 = 2.0 * r1.iter().zip(r2.iter()).map(|(x, y)| x * y).sum::<f64>();
                let s: f64 = r1.iter().chain(r2.iter()).map(|x| x * x).sum();
                let hopf2 = a * a + b * b;
                let area = mesh.tri_area()[t];
                let shear2 = if s > 0.0 { hopf2 / (s * s) } else { 0.0 };
                (area * hopf2, area * shear2)
            },
        )
        .collect();
    let h: Vec<f64> = terms.iter().map(|x| x.0).collect();
    let s: Vec<f64> = terms.iter().map(|x| x.1).collect();
    Ok((pairwise_sum(&h).sqrt(), pairwise_sum(&s).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PohozaevRow {
    /// Geodesic radius on the domain sphere.
    pub radius: f64,
    /// Radius `2·tan(r/2)` in the stereographic chart.
    pub chart_radius: f64,
    /// `∫_{∂B}(|u_ρ|² − ρ⁻²|u_θ|²) ds`.
    pub boundary: f64,
    /// `−2(α−1)/t ∫_B (∇|∇u|²·∇u)/(τ+|∇u|²) · ρ u_ρ dx`.
    pub bulk: f64,
    /// `|boundary − bulk|`.
    pub residual: f64,
    /// Same identity in the weighted form `(1−1/2α)∫F|u_ρ|² − 1/(2α)∫Fρ⁻²|u_θ|²
    /// = (1−1/α)/t ∫_B F|∇u|²`, `F = (τ+|∇u|²)^{α−1}`; absolute difference.
    pub weighted_residual: f64,
}

/// Pohozaev residuals on circles about a domain vertex, computed in the
/// stereographic chart centred there (64 arc samples per circle).
pub fn pohozaev_residual(pb: &Problem, u: &MapState, center: usize, radii: &[f64]) -> Result<Vec<PohozaevRow>> {
    pohozaev_with_samples(pb, u, center, radii, 64)
}

pub fn pohozaev_with_samples(
    pb: &Problem,
    u: &MapState,
    center: usize,
    radii: &[f64],
    samples: usize,
) -> Result<Vec<PohozaevRow>> {
    pb.check(u)?;
    let mesh = pb.mesh;
    if center >= mesh.num_vertices() {
        return Err(Error::IndexOutOfRange { index: center, len: mesh.num_vertices() });
    }
    if let Some(&r) = radii.iter().find(|r| !(**r > 0.0 && **r <= PI / 2.0)) {
        return Err(Error::RadiusOutOfChart(r));
    }
    let k = pb.k();
    let p = pb.params;
    let c = mesh.vertices()[center];
    let data = u.as_slice();
    let tri_dens = mesh.triangle_density(u);
    let vert_dens = mesh.vertex_average(&tri_dens);
    let (e1, e2) = tangent_basis(c);
    let vgrad = vertex_gradients(mesh, data, k);
    let mut rows = Vec::with_capacity(radii.len());
    let mut hint = 0;
    let mut g = vec![0.0; 3 * k];
    for &radius in radii {
        let rho = 2.0 * (0.5 * radius).tan();
        let lam = 1.0 / (1.0 + 0.25 * rho * rho);
        let (sr, cr) = radius.sin_cos();
        let mut rad = Vec::with_capacity(samples);
        let mut ang = Vec::with_capacity(samples);
        let mut wrad = Vec::with_capacity(samples);
        let mut wang = Vec::with_capacity(samples);
        for j in 0..samples {
            let th = 2.0 * PI * j as f64 / samples as f64;
            let dir = add(scale(e1, th.cos()), scale(e2, th.sin()));
            let x = add(scale(c, cr), scale(dir, sr));
            let er = add(scale(c, -sr), scale(dir, cr));
            let eth = add(scale(e1, -th.sin()), scale(e2, th.cos()));
            let (t, bw) = mesh.locate(x, hint);
            hint = t;
            let tri = mesh.triangles()[t];
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = (0..3).map(|c| bw[c] * vgrad[tri[c] * 3 * k + i]).sum();
            }
            let contract = |d: Vec3| -> f64 {
                (0..k).map(|i| (0..3).map(|j| d[j] * g[j * k + i]).sum::<f64>().powi(2)).sum()
            };
            let (a, b) = (contract(er), contract(eth));
            let s: f64 = (0..3).map(|c| bw[c] * vert_dens[tri[c]]).sum();
            let f = (p.tau + s).powf(p.alpha - 1.0);
            rad.push(a);
            ang.push(b);
            wrad.push(f * a);
            wang.push(f * b);
        }
        let dth = 2.0 * PI / samples as f64;
        // ds = ρ dθ, |u_ρ|² = λ²|∂_r u|², ρ⁻²|u_θ|² = λ²|∂_θ̂ u|²
        let w = rho * lam * lam * dth;
        let boundary = w * (pairwise_sum(&rad) - pairwise_sum(&ang));
        let lhs_b = w
            * ((1.0 - 0.5 / p.alpha) * pairwise_sum(&wrad) - 0.5 / p.alpha * pairwise_sum(&wang));
        // bulk terms over triangles with barycenters inside the disk
        let bulk_terms: Vec<(f64, f64)> = (0..mesh.num_triangles())
            .into_par_iter()
            .map_init(
                || (vec![0.0; k], vec![0.0; k]),
                |(g1, g2), t| {
                    let b = normalize(mesh.barycenter(t));
                    let d = dot3(b, c).clamp(-1.0, 1.0).acos();
                    if d >= radius {
                        return (0.0, 0.0);
                    }
                    let area = mesh.tri_area()[t];
                    let s = tri_dens[t];
                    let f = (p.tau + s).powf(p.alpha - 1.0);
                    let weighted = area * f * s;
                    if p.alpha == 1.0 || d < 1e-12 {
                        return (0.0, weighted);
                    }
                    mesh.grad_rows(t, data, k, g1, g2);
                    // ∇s from the P1 interpolant of vertex densities
                    let (mut d0, mut d1) = ([0.0f64], [0.0f64]);
                    mesh.grad_rows(t, &vert_dens, 1, &mut d0, &mut d1);
                    let ds = [d0[0], d1[0]];
                    let mut gv = vec![0.0; k];
                    for i in 0..k {
                        gv[i] = ds[0] * g1[i] + ds[1] * g2[i];
                    }
                    let perp = sub(b, scale(c, dot3(b, c)));
                    let er = add(scale(c, -d.sin()), scale(normalize(perp), d.cos()));
                    let ur = directional(mesh, t, er, g1, g2);
                    let rho_t = 2.0 * (0.5 * d).tan();
                    let lam_t = 1.0 / (1.0 + 0.25 * rho_t * rho_t);
                    let val: f64 = gv.iter().zip(&ur).map(|(a, b)| a * b).sum();
                    (area * rho_t * lam_t * val / (p.tau + s), weighted)
                },
            )
            .collect();
        let v1: Vec<f64> = bulk_terms.iter().map(|x| x.0).collect();
        let v2: Vec<f64> = bulk_terms.iter().map(|x| x.1).collect();
        let bulk = -2.0 * (p.alpha - 1.0) / rho * pairwise_sum(&v1);
        let rhs_b = (1.0 - 1.0 / p.alpha) / rho * pairwise_sum(&v2);
        rows.push(PohozaevRow {
            radius,
            chart_radius: rho,
            boundary,
            bulk,
            residual: (boundary - bulk).abs(),
            weighted_residual: (lhs_b - rhs_b).abs(),
        });
    }
    Ok(rows)
}

/// Area-weighted vertex averages of the ambient gradients `Σ_a f_a ⊗ r_a`
/// (3×K per vertex, row-major).
fn vertex_gradients(mesh: &DomainMesh, data: &[f64], k: usize) -> Vec<f64> {
    let per_tri: Vec<Vec<f64>> = (0..mesh.num_triangles())
        .into_par_iter()
        .map_init(
            || (vec![0.0; k], vec![0.0; k]),
            |(r1, r2), t| {
                mesh.grad_rows(t, data, k, r1, r2);
                let f = mesh.tri_frame()[t];
                let mut g = vec![0.0; 3 * k];
                for j in 0..3 {
                    for i in 0..k {
                        g[j * k + i] = f[0][j] * r1[i] + f[1][j] * r2[i];
                    }
                }
                g
            },
        )
        .collect();
    let mut out = vec![0.0; mesh.num_vertices() * 3 * k];
    for (v, o) in out.chunks_mut(3 * k).enumerate() {
        let mut den = 0.0;
        for &t in mesh.vertex_triangles(v) {
            let a = mesh.tri_area()[t];
            den += a;
            for (x, y) in o.iter_mut().zip(&per_tri[t]) {
                *x += a * y;
            }
        }
        o.iter_mut().for_each(|x| *x /= den);
    }
    out
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn tangent_basis(c: Vec3) -> (Vec3, Vec3) {
    let axis = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(sub(axis, scale(c, dot3(axis, c))));
    let e2 = cross(c, e1);
    (e1, e2)
}

/// Derivative of the P1 map along a unit direction, via the triangle frame.
fn directional(mesh: &DomainMesh, t: usize, d: Vec3, r1: &[f64], r2: &[f64]) -> Vec<f64> {
    let f = mesh.tri_frame()[t];
    let (a, b) = (dot3(d, f[0]), dot3(d, f[1]));
    r1.iter().zip(r2).map(|(x, y)| a * x + b * y).collect()
}

/// `Σ_v ι(v) Ψ_α(|∇u|²_v) m_v` and `Σ_v Ψ_α(|∇u|²_v) m_v`.
pub fn balancing(mesh: &DomainMesh, u: &MapState, alpha: f64) -> Result<([f64; 3], f64)> {
    mesh.check_state(u)?;
    let dens = mesh.vertex_density(u);
    let mut comps: [Vec<f64>; 3] = Default::default();
    let mut total = Vec::with_capacity(dens.len());
    for ((x, &s), &m) in mesh.vertices().iter().zip(&dens).zip(mesh.vertex_area()) {
        let w = psi_alpha(alpha, s) * m;
        for i in 0..3 {
            comps[i].push(x[i] * w);
        }
        total.push(w);
    }
    Ok(([pairwise_sum(&comps[0]), pairwise_sum(&comps[1]), pairwise_sum(&comps[2])], pairwise_sum(&total)))
}

/// `E_α(last stage) − [E(base) + ½Area + Σ μ² E(w)]`, with the base energy
/// the stage state's Dirichlet energy outside the bubble regions (or its
/// full Dirichlet energy when no bubble was detected).
pub fn energy_identity_defect(report: &ContinuationReport) -> Result<f64> {
    let last = report.last().ok_or(Error::NoContinuationData)?;
    let identity = if last.bubbles.is_empty() {
        last.dirichlet + 0.5 * report.area
    } else {
        let base = last.bubbles.iter().map(|b| b.base_energy).fold(f64::INFINITY, f64::min);
        let bubbles: f64 = last.bubbles.iter().map(|b| b.mu * b.mu * b.bubble_energy).sum();
        base + 0.5 * report.area + bubbles
    };
    Ok(last.alpha_energy - identity)
}

/// Whether the base map keeps energy above `gap` at the last stage; `None`
/// when that stage has no bubble.
pub fn non_constancy(report: &ContinuationReport, gap: f64) -> Option<bool> {
    let last = report.last()?;
    (!last.bubbles.is_empty()).then(|| last.bubbles.iter().all(|b| b.base_energy >= gap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub conformality: (f64, f64),
    pub pohozaev: Vec<PohozaevRow>,
    pub balancing: [f64; 3],
    /// `‖balancing‖ / Σ Ψ_α m_v` (0 when the denominator vanishes).
    pub balancing_relative: f64,
    pub el_residual: f64,
    pub energy_identity_defect: Option<f64>,
}

/// All diagnostics at one state.
pub fn diagnose(
    pb: &Problem,
    u: &MapState,
    center: usize,
    radii: &[f64],
    continuation: Option<&ContinuationReport>,
) -> Result<DiagnosticsReport> {
    let conf = conformality(pb.mesh, u)?;
    let pohozaev = pohozaev_residual(pb, u, center, radii)?;
    let (bal, total) = balancing(pb.mesh, u, pb.params.alpha)?;
    let bn = (bal[0] * bal[0] + bal[1] * bal[1] + bal[2] * bal[2]).sqrt();
    let el = pb.grad_norm(&pb.gradient(u));
    let defect = continuation.map(energy_identity_defect).transpose()?;
    Ok(DiagnosticsReport {
        conformality: conf,
        pohozaev,
        balancing: bal,
        balancing_relative: if total > 0.0 { bn / total } else { 0.0 },
        el_residual: el,
        energy_identity_defect: defect,
    })
}
