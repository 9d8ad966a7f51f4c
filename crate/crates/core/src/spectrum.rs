//! Jacobi operator, Morse index and the scalar index-comparison form.
//!
//! Tangent fields are written in per-vertex orthonormal frames of `T_{u_v}N`,
//! so the second variation becomes a symmetric matrix `J` paired with the
//! lumped mass `M`; eigenvalues of `J x = μ M x` are those of
//! `M^{−1/2} J M^{−1/2}`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{MapState, Problem};
use crate::error::{Error, Result};
use crate::linalg::{dense_eigenvalues, shift_invert_eigenvalues, BandedLdl, CsrMatrix};
use crate::mesh::DomainMesh;
use crate::target::{dot, TargetManifold, TwoFormField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumOptions {
    /// Number of lowest eigenvalues reported.
    pub n_eig: usize,
    /// `tol_eig = tol_rel · max|eigenvalue|`.
    pub tol_rel: f64,
    /// Largest unknown count handled by the dense solver.
    pub dense_max: usize,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { n_eig: 20, tol_rel: 1e-6, dense_max: 3000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Lowest eigenvalues, ascending (above `dense_max` unknowns: those
    /// nearest a small negative shift).
    pub eigenvalues: Vec<f64>,
    pub morse_index: usize,
    /// Count in `[−tol_eig, tol_eig]`.
    pub nullity: usize,
    pub tol_eig: f64,
    /// Largest |eigenvalue| (estimated by power iteration when sparse).
    pub spectral_scale: f64,
    pub unknowns: usize,
    pub dense: bool,
}

/// Symmetric, mass-normalized Jacobi matrix in tangent frames.
#[derive(Clone, Debug)]
pub struct JacobiOperator {
    pub matrix: CsrMatrix,
    /// Per-vertex frames, `n` vectors of length `K` each.
    pub frames: Vec<Vec<Vec<f64>>>,
    pub n_per_vertex: usize,
    /// Gradient norm of the state the operator was assembled at.
    pub grad_norm: f64,
}

impl JacobiOperator {
    pub fn unknowns(&self) -> usize {
        self.matrix.n()
    }

    /// Frame coordinates (mass-scaled) of an ambient tangent field.
    pub fn to_coords(&self, mesh: &DomainMesh, v: &[f64]) -> Vec<f64> {
        let k = self.frames.first().map_or(0, |f| f.first().map_or(0, |e| e.len()));
        let mut x = Vec::with_capacity(self.unknowns());
        for (i, f) in self.frames.iter().enumerate() {
            let sm = mesh.vertex_area()[i].sqrt();
            for e in f {
                x.push(sm * dot(e, &v[i * k..(i + 1) * k]));
            }
        }
        x
    }
}

/// Assembles `M^{−1/2} J M^{−1/2}` at `u` (symmetrized).
pub fn assemble_jacobi(pb: &Problem, u: &MapState) -> Result<JacobiOperator> {
    pb.check(u)?;
    let mesh = pb.mesh;
    let k = pb.k();
    let frames: Vec<Vec<Vec<f64>>> = u.as_slice().chunks(k).map(|y| pb.target.tangent_frame_unchecked(y)).collect();
    let n = pb.target.intrinsic_dim();
    if frames.iter().any(|f| f.len() != n) {
        return Err(Error::EigSolverFailure("tangent frame construction failed".into()));
    }
    let amb = pb.ambient_gradient(u);
    let grad_norm = pb.grad_norm(&pb.metric_gradient(u, amb.clone()));
    let with_omega = pb.omega_active();
    let tris = mesh.triangles();
    let local: Vec<Vec<(usize, usize, f64)>> = (0..mesh.num_triangles())
        .into_par_iter()
        .map_init(
            || (pb.scratch(with_omega), vec![0.0; 3 * k], vec![0.0; 3 * k]),
            |(s, v, out), t| {
                pb.load_triangle(s, u, t);
                let tri = tris[t];
                let mut entries = Vec::with_capacity(9 * n * n);
                for c in 0..3 {
                    for b in 0..n {
                        v.iter_mut().for_each(|x| *x = 0.0);
                        v[c * k..(c + 1) * k].copy_from_slice(&frames[tri[c]][b]);
                        pb.local_hessian(s, t, with_omega, v, out);
                        for r in 0..3 {
                            for a in 0..n {
                                let val = dot(&frames[tri[r]][a], &out[r * k..(r + 1) * k]);
                                entries.push((tri[r] * n + a, tri[c] * n + b, val));
                            }
                        }
                    }
                }
                entries
            },
        )
        .collect();
    let mass = mesh.vertex_area();
    let mut trip = Vec::with_capacity(mesh.num_triangles() * 18 * n * n + mesh.num_vertices() * 2 * n * n);
    let sc = |i: usize, j: usize| 1.0 / (mass[i / n] * mass[j / n]).sqrt();
    for (i, j, v) in local.into_iter().flatten() {
        let w = 0.5 * v * sc(i, j);
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    let mut tmp = vec![0.0; k];
    for (vtx, (y, g)) in u.as_slice().chunks(k).zip(amb.chunks(k)).enumerate() {
        for b in 0..n {
            tmp.iter_mut().for_each(|x| *x = 0.0);
            pb.target.add_shape_term(y, g, &frames[vtx][b], 1.0, &mut tmp);
            for a in 0..n {
                let (i, j) = (vtx * n + a, vtx * n + b);
                let w = 0.5 * dot(&frames[vtx][a], &tmp) * sc(i, j);
                trip.push((i, j, w));
                trip.push((j, i, w));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(mesh.num_vertices() * n, trip);
    Ok(JacobiOperator { matrix, frames, n_per_vertex: n, grad_norm })
}

/// Index, nullity and lowest eigenvalues of a symmetric matrix.
pub fn symmetric_spectrum(a: &CsrMatrix, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let n = a.n();
    if n == 0 {
        return Ok(SpectrumReport {
            eigenvalues: Vec::new(),
            morse_index: 0,
            nullity: 0,
            tol_eig: 0.0,
            spectral_scale: 0.0,
            unknowns: 0,
            dense: true,
        });
    }
    if n <= opts.dense_max {
        let vals = dense_eigenvalues(a.to_dense())?;
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = opts.tol_rel * scale;
        return Ok(SpectrumReport {
            morse_index: vals.iter().filter(|&&v| v < -tol).count(),
            nullity: vals.iter().filter(|&&v| v.abs() <= tol).count(),
            eigenvalues: vals.into_iter().take(opts.n_eig).collect(),
            tol_eig: tol,
            spectral_scale: scale,
            unknowns: n,
            dense: true,
        });
    }
    let scale = power_estimate(a, opts.seed);
    let tol = opts.tol_rel * scale;
    let perm = a.rcm();
    let below = BandedLdl::factor(a, &perm, -tol)?.negative_count();
    let upto = BandedLdl::factor(a, &perm, tol)?.negative_count();
    let eigenvalues = shift_invert_eigenvalues(a, -1e-3 * scale, opts.n_eig, opts.seed)?;
    Ok(SpectrumReport {
        eigenvalues,
        morse_index: below,
        nullity: upto - below,
        tol_eig: tol,
        spectral_scale: scale,
        unknowns: n,
        dense: false,
    })
}

fn power_estimate(a: &CsrMatrix, seed: u64) -> f64 {
    let n = a.n();
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let mut est = 0.0;
    for _ in 0..300 {
        let nx = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let y = a.mul_vec(&x);
        est = dot(&y, &y).sqrt();
        if est == 0.0 {
            break;
        }
        x = y;
    }
    est
}

/// Morse index of `E^{λω}_α` at `u`.
pub fn morse_index(pb: &Problem, u: &MapState, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let j = assemble_jacobi(pb, u)?;
    symmetric_spectrum(&j.matrix, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BOmegaOptions {
    /// Vertices whose image star area is below `area_tol` times the mean are
    /// excluded (Dirichlet condition).
    pub area_tol: f64,
    /// Largest excluded fraction before the immersion counts as degenerate.
    pub max_flagged_fraction: f64,
    pub spectrum: SpectrumOptions,
}

impl Default for BOmegaOptions {
    fn default() -> Self {
        Self { area_tol: 1e-3, max_flagged_fraction: 0.1, spectrum: SpectrumOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BOmegaReport {
    pub index: usize,
    pub flagged: usize,
    pub spectrum: SpectrumReport,
}

/// Index of `B_ω(f,f) = ∫|∇f|² − |∇u|²(|h|² + Ric(𝒏,𝒏)/2 − |∇h|) f²` with
/// `𝒏` the unit normal of the image surface in `N` and `h` the scalar mean
/// curvature of the form.
pub fn b_omega_index(
    mesh: &DomainMesh,
    target: &TargetManifold,
    form: &TwoFormField,
    u: &MapState,
    opts: &BOmegaOptions,
) -> Result<BOmegaReport> {
    let n = target.intrinsic_dim();
    if n != 3 {
        return Err(Error::TargetNotThreeDimensional(n));
    }
    if form.ambient_dim() != target.ambient_dim() {
        return Err(Error::DimensionMismatch("form and target dimensions differ".into()));
    }
    mesh.check_state(u)?;
    let k = target.ambient_dim();
    let data = u.as_slice();
    let frames: Vec<Vec<Vec<f64>>> = data.chunks(k).map(|y| target.tangent_frame_unchecked(y)).collect();
    // image normal in frame coordinates, summed over incident triangles
    let normals: Vec<[f64; 3]> = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|v| {
            let f = &frames[v];
            let coords = |w: usize| -> [f64; 3] {
                let d: Vec<f64> = (0..k).map(|i| data[w * k + i] - data[v * k + i]).collect();
                [dot(&f[0], &d), dot(&f[1], &d), dot(&f[2], &d)]
            };
            let mut acc = [0.0; 3];
            for &t in mesh.vertex_triangles(v) {
                let tri = mesh.triangles()[t];
                let i = tri.iter().position(|&x| x == v).unwrap();
                let a = coords(tri[(i + 1) % 3]);
                let b = coords(tri[(i + 2) % 3]);
                acc[0] += a[1] * b[2] - a[2] * b[1];
                acc[1] += a[2] * b[0] - a[0] * b[2];
                acc[2] += a[0] * b[1] - a[1] * b[0];
            }
            acc
        })
        .collect();
    let star: Vec<f64> = normals.iter().map(|c| 0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).collect();
    let mean = star.iter().sum::<f64>() / star.len() as f64;
    let flagged: Vec<bool> = star.iter().map(|&a| !(a > opts.area_tol * mean)).collect();
    let nflag = flagged.iter().filter(|&&f| f).count();
    if nflag as f64 > opts.max_flagged_fraction * mesh.num_vertices() as f64 {
        return Err(Error::DegenerateImmersion { flagged: nflag, total: mesh.num_vertices() });
    }
    let dens = mesh.vertex_density(u);
    let with_form = !form.is_zero();
    let potential: Vec<f64> = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|v| {
            if flagged[v] {
                return 0.0;
            }
            let y = &data[v * k..(v + 1) * k];
            let f = &frames[v];
            let c = normals[v];
            let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            let nu: Vec<f64> = (0..k).map(|i| (c[0] * f[0][i] + c[1] * f[1][i] + c[2] * f[2][i]) / len).collect();
            let ric: f64 = f.iter().map(|e| target.curvature_unchecked(y, &nu, e, &nu, e)).sum();
            let (h2, dh) = if with_form {
                let h = 0.5 * form_value(form, y, &f[0], &f[1], &f[2]);
                let g: f64 = f
                    .iter()
                    .map(|x| 0.5 * form.covariant_dh(target, y, x, &f[0], &f[1], &f[2]))
                    .map(|d| d * d)
                    .sum();
                (h * h, g.sqrt())
            } else {
                (0.0, 0.0)
            };
            dens[v] * (h2 + 0.5 * ric - dh)
        })
        .collect();
    let spectrum = schrodinger_spectrum(mesh, &potential, &flagged, &opts.spectrum)?;
    Ok(BOmegaReport { index: spectrum.morse_index, flagged: nflag, spectrum })
}

fn form_value(form: &TwoFormField, y: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let h = form.h_tensor(y);
    let k = a.len();
    let mut s = 0.0;
    for kk in 0..k {
        for i in 0..k {
            for j in 0..k {
                s += h[kk * k * k + i * k + j] * a[kk] * b[i] * c[j];
            }
        }
    }
    s
}

/// Spectrum of `−Δ − V` on mesh functions (P1 stiffness, lumped mass),
/// with `excluded` vertices removed.
pub fn schrodinger_spectrum(
    mesh: &DomainMesh,
    potential: &[f64],
    excluded: &[bool],
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    let nv = mesh.num_vertices();
    if potential.len() != nv || excluded.len() != nv {
        return Err(Error::DimensionMismatch("one potential value and flag per vertex required".into()));
    }
    let mut index = vec![usize::MAX; nv];
    let mut m = 0;
    for v in 0..nv {
        if !excluded[v] {
            index[v] = m;
            m += 1;
        }
    }
    let mass = mesh.vertex_area();
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles() + nv);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.tri_grad()[t];
        let a = mesh.tri_area()[t];
        for r in 0..3 {
            for c in 0..3 {
                let (i, j) = (index[tri[r]], index[tri[c]]);
                if i == usize::MAX || j == usize::MAX {
                    continue;
                }
                let s = a * (g[0][r] * g[0][c] + g[1][r] * g[1][c]);
                trip.push((i, j, s / (mass[tri[r]] * mass[tri[c]]).sqrt()));
            }
        }
    }
    for v in 0..nv {
        if index[v] != usize::MAX {
            trip.push((index[v], index[v], -potential[v]));
        }
    }
    symmetric_spectrum(&CsrMatrix::from_triplets(m, trip), opts)
}

/// Index of `−Δ − V`.
pub fn schrodinger_index(mesh: &DomainMesh, potential: &[f64], opts: &SpectrumOptions) -> Result<usize> {
    Ok(schrodinger_spectrum(mesh, potential, &vec![false; mesh.num_vertices()], opts)?.morse_index)
}

/// `E(u) ≤ C₀/(8π)` for solutions of index at most one; `None` otherwise.
pub fn energy_bound_check(energy: f64, index: usize, c0: f64) -> Option<bool> {
    (index <= 1).then(|| energy <= c0 / (8.0 * std::f64::consts::PI))
}

/// Dense copy of an operator restricted to the span of `q`'s columns.
pub fn restrict(a: &CsrMatrix, q: &DMatrix<f64>) -> DMatrix<f64> {
    let aq = DMatrix::from_fn(a.n(), q.ncols(), |_, _| 0.0);
    let mut aq = aq;
    for c in 0..q.ncols() {
        let col: Vec<f64> = q.column(c).iter().cloned().collect();
        let y = a.mul_vec(&col);
        for (r, v) in y.into_iter().enumerate() {
            aq[(r, c)] = v;
        }
    }
    q.transpose() * aq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::FunctionalParams;

    #[test]
    fn constant_map_index_zero() {
        let m = DomainMesh::icosphere(2).unwrap();
        let t = TargetManifold::round_sphere(3, 1.0).unwrap();
        let f = TwoFormField::zero(4);
        let pb = Problem::new(&m, &t, &f, FunctionalParams::harmonic(0.0)).unwrap();
        let u = MapState::constant(m.num_vertices(), &[0.0, 0.0, 0.0, 1.0]);
        let r = morse_index(&pb, &u, &SpectrumOptions::default()).unwrap();
        assert_eq!(r.morse_index, 0);
        assert_eq!(r.nullity, 3);
    }

    #[test]
    fn jacobi_matches_hessian_action() {
        let m = DomainMesh::icosphere(1).unwrap();
        let t = TargetManifold::round_sphere(3, 1.0).unwrap();
        let f = TwoFormField::cosine(4, 0.3, 1.7).unwrap();
        let pb = Problem::new(&m, &t, &f, FunctionalParams::new(1.2, 0.7, 1.0).unwrap()).unwrap();
        let u = MapState::from_fn_projected(&m, &t, |x| vec![x[0], x[1] + 0.2 * x[2], x[2], 0.4 + x[0] * x[1]]).unwrap();
        let j = assemble_jacobi(&pb, &u).unwrap();
        let k = 4;
        let v: Vec<f64> = (0..m.num_vertices() * k).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let v = crate::energy::TangentField::projected(&t, &u, v);
        let hv = pb.hessian_apply(&u, &v);
        let x = j.to_coords(&m, v.as_slice());
        let jx = j.matrix.mul_vec(&x);
        // M^{−1/2} J M^{−1/2} (M^{1/2} x) = M^{1/2} (frame coordinates of H v)
        let expect = j.to_coords(&m, hv.as_slice());
        let scale = expect.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in jx.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-8 * scale, "{a} {b}");
        }
    }

    #[test]
    fn constant_potential_counts_harmonics() {
        // −Δ − 2c on the round S² with c = 2: eigenvalues l(l+1) − 4 < 0 for l ≤ 1
        let m = DomainMesh::icosphere(3).unwrap();
        let v = vec![4.0; m.num_vertices()];
        assert_eq!(schrodinger_index(&m, &v, &SpectrumOptions::default()).unwrap(), 4);
    }

    #[test]
    fn flat_zero_form_b_omega_vanishes() {
        let m = DomainMesh::icosphere(2).unwrap();
        let t = TargetManifold::flat_euclidean(3).unwrap();
        let f = TwoFormField::zero(3);
        let u = MapState::identity(&m, &t).unwrap();
        let r = b_omega_index(&m, &t, &f, &u, &BOmegaOptions::default()).unwrap();
        assert_eq!(r.index, 0);
    }

    #[test]
    fn sparse_path_agrees_with_dense() {
        let m = DomainMesh::icosphere(2).unwrap();
        let v = vec![4.0; m.num_vertices()];
        let dense = schrodinger_spectrum(&m, &v, &vec![false; m.num_vertices()], &SpectrumOptions::default()).unwrap();
        let sparse = schrodinger_spectrum(
            &m,
            &v,
            &vec![false; m.num_vertices()],
            &SpectrumOptions { dense_max: 10, ..Default::default() },
        )
        .unwrap();
        assert!(!sparse.dense);
        assert_eq!(dense.morse_index, sparse.morse_index);
        assert_eq!(dense.nullity, sparse.nullity);
        assert!((dense.eigenvalues[0] - sparse.eigenvalues[0]).abs() < 1e-8);
    }
}
