//! Triangulated round 2-sphere with P1 finite elements.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::energy::MapState;
use crate::error::{Error, Result};
use crate::pairwise_sum;

pub type Vec3 = [f64; 3];

#[derive(Clone, Debug)]
pub struct DomainMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    vertex_area: Vec<f64>,
    tri_area: Vec<f64>,
    /// Row `r`, column `c`: component `r` of the gradient of the hat function
    /// of local vertex `c`, in the triangle's orthonormal frame.
    tri_grad: Vec<[[f64; 3]; 2]>,
    tri_frame: Vec<[Vec3; 2]>,
    tri_neighbors: Vec<[usize; 3]>,
    vertex_tri_offsets: Vec<usize>,
    vertex_tri_list: Vec<usize>,
    subdivisions: Option<u32>,
}

impl DomainMesh {
    /// Builds a mesh from vertices (projected to the unit sphere) and
    /// consistently oriented triangles forming a closed surface.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(vertices, triangles, None)
    }

    /// Icosahedron refined `subdivisions` times by edge midpoints.
    pub fn icosphere(subdivisions: u32) -> Result<Self> {
        if subdivisions > 8 {
            return Err(Error::SubdivisionOutOfRange(subdivisions));
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = vec![
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ];
        for v in vertices.iter_mut() {
            *v = normalize(*v);
        }
        let mut triangles: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let (p, q) = (verts[a], verts[b]);
                    verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(triangles.len() * 4);
            for &[a, b, c] in &triangles {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            triangles = next;
        }
        Self::build(vertices, triangles, Some(subdivisions))
    }

    fn build(mut vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, subdivisions: Option<u32>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 4 || triangles.len() < 4 {
            return Err(Error::InvalidMesh("too few vertices or triangles".into()));
        }
        for v in vertices.iter_mut() {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::InvalidMesh("vertex at the origin or non-finite".into()));
            }
            *v = [v[0] / n, v[1] / n, v[2] / n];
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                if tri[i] >= nv {
                    return Err(Error::InvalidMesh(format!("triangle {t} references vertex {}", tri[i])));
                }
                let e = (tri[i], tri[(i + 1) % 3]);
                if e.0 == e.1 {
                    return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
                }
                if directed.insert(e, t).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "directed edge {:?} used twice (inconsistent orientation)",
                        e
                    )));
                }
            }
        }
        let mut tri_neighbors = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut nb = [0usize; 3];
            for i in 0..3 {
                let (a, b) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
                nb[i] = *directed.get(&(b, a)).ok_or_else(|| {
                    Error::InvalidMesh(format!("edge ({a},{b}) of triangle {t} has no opposite"))
                })?;
            }
            tri_neighbors.push(nb);
        }
        let mut tri_area = Vec::with_capacity(triangles.len());
        let mut tri_grad = Vec::with_capacity(triangles.len());
        let mut tri_frame = Vec::with_capacity(triangles.len());
        let mut vertex_area = vec![0.0; nv];
        let mut counts = vec![0usize; nv + 1];
        for tri in &triangles {
            let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            let e1 = sub(b, a);
            let e2 = sub(c, a);
            let n = cross(e1, e2);
            let twice = norm3(n);
            if twice <= 1e-300 {
                return Err(Error::InvalidMesh("zero-area triangle".into()));
            }
            // quadrature weight: exact spherical-triangle area of the domain
            let area = spherical_area(a, b, c);
            let f1 = scale(e1, 1.0 / norm3(e1));
            let f2 = cross(scale(n, 1.0 / twice), f1);
            let p = [[0.0, 0.0], [dot3(e1, f1), dot3(e1, f2)], [dot3(e2, f1), dot3(e2, f2)]];
            let mut g = [[0.0; 3]; 2];
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                g[0][i] = (p[j][1] - p[k][1]) / twice;
                g[1][i] = (p[k][0] - p[j][0]) / twice;
            }
            tri_area.push(area);
            tri_grad.push(g);
            tri_frame.push([f1, f2]);
            for &v in tri {
                vertex_area[v] += area / 3.0;
                counts[v + 1] += 1;
            }
        }
        if vertex_area.iter().any(|a| *a == 0.0) {
            return Err(Error::InvalidMesh("isolated vertex".into()));
        }
        for i in 0..nv {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut list = vec![0usize; counts[nv]];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                list[fill[v]] = t;
                fill[v] += 1;
            }
        }
        Ok(Self {
            vertices,
            triangles,
            vertex_area,
            tri_area,
            tri_grad,
            tri_frame,
            tri_neighbors,
            vertex_tri_offsets: counts,
            vertex_tri_list: list,
            subdivisions,
        })
    }

    /// Same mesh with every triangle's orientation reversed.
    pub fn reversed(&self) -> Self {
        let tris = self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect();
        Self::build(self.vertices.clone(), tris, self.subdivisions).expect("reversal of a valid mesh")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_area(&self) -> &[f64] {
        &self.vertex_area
    }

    pub fn tri_area(&self) -> &[f64] {
        &self.tri_area
    }

    pub fn tri_grad(&self) -> &[[[f64; 3]; 2]] {
        &self.tri_grad
    }

    pub fn tri_frame(&self) -> &[[Vec3; 2]] {
        &self.tri_frame
    }

    pub fn tri_neighbors(&self) -> &[[usize; 3]] {
        &self.tri_neighbors
    }

    pub fn subdivisions(&self) -> Option<u32> {
        self.subdivisions
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_tri_list[self.vertex_tri_offsets[v]..self.vertex_tri_offsets[v + 1]]
    }

    pub fn total_area(&self) -> f64 {
        pairwise_sum(&self.tri_area)
    }

    /// Mean edge length, used as the mesh size `h`.
    pub fn mesh_size(&self) -> f64 {
        let mut s = 0.0;
        for tri in &self.triangles {
            for i in 0..3 {
                s += norm3(sub(self.vertices[tri[i]], self.vertices[tri[(i + 1) % 3]]));
            }
        }
        s / (3 * self.triangles.len()) as f64
    }

    /// `true` when every directed edge has its reverse (closed, oriented).
    pub fn is_closed_oriented(&self) -> bool {
        self.tri_neighbors.iter().enumerate().all(|(t, nb)| {
            (0..3).all(|i| {
                let (a, b) = (self.triangles[t][(i + 1) % 3], self.triangles[t][(i + 2) % 3]);
                let o = self.triangles[nb[i]];
                (0..3).any(|j| o[j] == b && o[(j + 1) % 3] == a)
            })
        })
    }

    pub fn barycenter(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0, (p[2] + q[2] + r[2]) / 3.0]
    }

    /// Gradient rows `∂₁u, ∂₂u` of a flat `K`-valued vertex array on triangle `t`.
    #[inline]
    pub(crate) fn grad_rows(&self, t: usize, data: &[f64], k: usize, r1: &mut [f64], r2: &mut [f64]) {
        let g = &self.tri_grad[t];
        let tri = self.triangles[t];
        for i in 0..k {
            r1[i] = 0.0;
            r2[i] = 0.0;
        }
        // edge differences make constants map to exact zeros
        let a = &data[tri[0] * k..tri[0] * k + k];
        for c in 1..3 {
            let row = &data[tri[c] * k..tri[c] * k + k];
            for i in 0..k {
                let d = row[i] - a[i];
                r1[i] += g[0][c] * d;
                r2[i] += g[1][c] * d;
            }
        }
    }

    /// `∇u` on triangle `t` as a 2×K matrix.
    pub fn map_gradient(&self, u: &MapState, t: usize) -> Result<DMatrix<f64>> {
        if t >= self.triangles.len() {
            return Err(Error::IndexOutOfRange { index: t, len: self.triangles.len() });
        }
        self.check_state(u)?;
        let k = u.dim();
        let mut r1 = vec![0.0; k];
        let mut r2 = vec![0.0; k];
        self.grad_rows(t, u.as_slice(), k, &mut r1, &mut r2);
        Ok(DMatrix::from_fn(2, k, |r, c| if r == 0 { r1[c] } else { r2[c] }))
    }

    pub(crate) fn check_state(&self, u: &MapState) -> Result<()> {
        if u.num_vertices() != self.num_vertices() {
            return Err(Error::MeshMismatch(format!(
                "state has {} vertices, mesh has {}",
                u.num_vertices(),
                self.num_vertices()
            )));
        }
        Ok(())
    }

    /// Per-triangle `|∇u|²`.
    pub fn triangle_density(&self, u: &MapState) -> Vec<f64> {
        let k = u.dim();
        let data = u.as_slice();
        (0..self.num_triangles())
            .into_par_iter()
            .map_init(
                || (vec![0.0; k], vec![0.0; k]),
                |(r1, r2), t| {
                    self.grad_rows(t, data, k, r1, r2);
                    r1.iter().map(|x| x * x).sum::<f64>() + r2.iter().map(|x| x * x).sum::<f64>()
                },
            )
            .collect()
    }

    /// Area-weighted average of incident triangle densities at each vertex.
    pub fn vertex_density(&self, u: &MapState) -> Vec<f64> {
        self.vertex_average(&self.triangle_density(u))
    }

    pub(crate) fn vertex_average(&self, per_tri: &[f64]) -> Vec<f64> {
        (0..self.num_vertices())
            .map(|v| {
                let mut num = 0.0;
                let mut den = 0.0;
                for &t in self.vertex_triangles(v) {
                    num += self.tri_area[t] * per_tri[t];
                    den += self.tri_area[t];
                }
                num / den
            })
            .collect()
    }

    /// Dirichlet energy over triangles whose barycenters lie at geodesic
    /// distance in `[r_in, r_out)` from the given vertex (`r_out ≥ π` closes
    /// the interval).
    pub fn annulus_energy(&self, u: &MapState, center: usize, r_in: f64, r_out: f64) -> Result<f64> {
        if center >= self.num_vertices() {
            return Err(Error::IndexOutOfRange { index: center, len: self.num_vertices() });
        }
        self.check_state(u)?;
        Ok(self.annulus_energy_about(u, self.vertices[center], r_in, r_out))
    }

    pub(crate) fn annulus_energy_about(&self, u: &MapState, center: Vec3, r_in: f64, r_out: f64) -> f64 {
        let dens = self.triangle_density(u);
        let terms: Vec<f64> = (0..self.num_triangles())
            .map(|t| {
                let d = geodesic(normalize(self.barycenter(t)), center);
                if d >= r_in && (d < r_out || r_out >= PI) {
                    0.5 * self.tri_area[t] * dens[t]
                } else {
                    0.0
                }
            })
            .collect();
        pairwise_sum(&terms)
    }

    /// Triangle containing the radial projection of `p`, with barycentric
    /// weights, found by walking from `start`.
    pub fn locate(&self, p: Vec3, start: usize) -> (usize, [f64; 3]) {
        let mut t = start.min(self.num_triangles() - 1);
        let mut prev = usize::MAX;
        for _ in 0..4 * self.num_triangles().max(16) {
            let w = self.ray_weights(t, p);
            let (imin, wmin) = w
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
            if wmin >= -1e-12 {
                return (t, w);
            }
            let next = self.tri_neighbors[t][imin];
            if next == prev {
                break;
            }
            prev = t;
            t = next;
        }
        // walk cycled on a badly shaped mesh; scan
        let mut best = (0, [0.0; 3], f64::NEG_INFINITY);
        for t in 0..self.num_triangles() {
            let w = self.ray_weights(t, p);
            let m = w[0].min(w[1]).min(w[2]);
            if m > best.2 {
                best = (t, w, m);
            }
        }
        (best.0, best.1)
    }

    fn ray_weights(&self, t: usize, p: Vec3) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let w = [det3(p, vb, vc), det3(va, p, vc), det3(va, vb, p)];
        let s = w[0] + w[1] + w[2];
        if s.abs() < 1e-300 {
            return [-1.0, -1.0, -1.0];
        }
        [w[0] / s, w[1] / s, w[2] / s]
    }

    /// P1 interpolation of `data` (`k` values per vertex) at the radial
    /// projection of `p`.
    pub(crate) fn interpolate(&self, data: &[f64], k: usize, p: Vec3, hint: &mut usize, out: &mut [f64]) {
        let (t, w) = self.locate(p, *hint);
        *hint = t;
        let tri = self.triangles[t];
        for i in 0..k {
            out[i] = w[0] * data[tri[0] * k + i] + w[1] * data[tri[1] * k + i] + w[2] * data[tri[2] * k + i];
        }
    }

    /// Nearest vertex to `p` (by angle).
    pub fn nearest_vertex(&self, p: Vec3) -> usize {
        let p = normalize(p);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = dot3(*v, p);
            if d > best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Area of the geodesic triangle spanned by three unit vectors.
pub fn spherical_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let num = det3(a, b, c).abs();
    let den = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a);
    2.0 * num.atan2(den)
}

/// Great-circle distance between unit vectors.
pub fn geodesic(a: Vec3, b: Vec3) -> f64 {
    norm3(cross(a, b)).atan2(dot3(a, b))
}

pub(crate) fn normalize(v: Vec3) -> Vec3 {
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn det3(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    dot3(a, cross(b, c))
}
