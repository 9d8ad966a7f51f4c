//! Target manifolds `N ⊂ ℝ^K` and two-forms `ω` on the ambient space.
//!
//! The curved built-ins (round spheres and ellipsoids) are all quadric
//! hypersurfaces `Σ d_i y_i² = 1`, so normals, the second fundamental form and
//! the Gauss-equation curvature share one implementation. Flat tori are
//! represented by lifted coordinates in `ℝ^K`: the projection is the identity
//! and periodicity only enters through the chosen form.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    RoundSphere { n: usize, radius: f64 },
    Ellipsoid { semiaxes: Vec<f64> },
    FlatEuclidean { dim: usize },
    FlatTorus { periods: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct TargetManifold {
    kind: TargetKind,
    ambient_dim: usize,
    tubular_radius: f64,
    tol_on_manifold: f64,
    // quadric coefficients d_i for curved kinds, empty for flat ones
    quadric: Vec<f64>,
}

impl TargetManifold {
    pub fn new(kind: TargetKind) -> Result<Self> {
        match kind {
            TargetKind::RoundSphere { n, radius } => Self::round_sphere(n, radius),
            TargetKind::Ellipsoid { semiaxes } => Self::ellipsoid(&semiaxes),
            TargetKind::FlatEuclidean { dim } => Self::flat_euclidean(dim),
            TargetKind::FlatTorus { periods } => Self::flat_torus(&periods),
        }
    }

    /// Round `S^n ⊂ ℝ^{n+1}` of the given radius.
    pub fn round_sphere(n: usize, radius: f64) -> Result<Self> {
        if !(2..=4).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "round sphere dimension {n} not in 2..=4"
            )));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!("sphere radius {radius}")));
        }
        Ok(Self {
            kind: TargetKind::RoundSphere { n, radius },
            ambient_dim: n + 1,
            tubular_radius: radius,
            tol_on_manifold: 1e-10 * 2.0 * radius,
            quadric: vec![1.0 / (radius * radius); n + 1],
        })
    }

    /// Ellipsoid `Σ y_i²/a_i² = 1` in ℝ³ or ℝ⁴.
    pub fn ellipsoid(semiaxes: &[f64]) -> Result<Self> {
        if !(3..=4).contains(&semiaxes.len()) {
            return Err(Error::InvalidParameter(format!(
                "ellipsoid needs 3 or 4 semiaxes, got {}",
                semiaxes.len()
            )));
        }
        if semiaxes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidParameter("ellipsoid semiaxes must be positive".into()));
        }
        let amin = semiaxes.iter().cloned().fold(f64::INFINITY, f64::min);
        let amax = semiaxes.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            kind: TargetKind::Ellipsoid { semiaxes: semiaxes.to_vec() },
            ambient_dim: semiaxes.len(),
            // smallest principal radius of curvature
            tubular_radius: amin * amin / amax,
            tol_on_manifold: 1e-10 * 2.0 * amax,
            quadric: semiaxes.iter().map(|a| 1.0 / (a * a)).collect(),
        })
    }

    pub fn flat_euclidean(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("euclidean dimension {dim}")));
        }
        Ok(Self {
            kind: TargetKind::FlatEuclidean { dim },
            ambient_dim: dim,
            tubular_radius: f64::INFINITY,
            tol_on_manifold: 0.0,
            quadric: Vec::new(),
        })
    }

    /// Flat torus `ℝ^K / Π periods_i ℤ`, stored in lifted coordinates.
    pub fn flat_torus(periods: &[f64]) -> Result<Self> {
        if periods.len() < 2 || periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidParameter("torus periods must be positive, K >= 2".into()));
        }
        Ok(Self {
            kind: TargetKind::FlatTorus { periods: periods.to_vec() },
            ambient_dim: periods.len(),
            tubular_radius: f64::INFINITY,
            tol_on_manifold: 0.0,
            quadric: Vec::new(),
        })
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        if self.is_flat() {
            self.ambient_dim
        } else {
            self.ambient_dim - 1
        }
    }

    pub fn tubular_radius(&self) -> f64 {
        self.tubular_radius
    }

    pub fn tol_on_manifold(&self) -> f64 {
        self.tol_on_manifold
    }

    pub fn is_flat(&self) -> bool {
        self.quadric.is_empty()
    }

    /// Scale used to nondimensionalize tolerances (diameter for compact kinds).
    pub fn length_scale(&self) -> f64 {
        match &self.kind {
            TargetKind::RoundSphere { radius, .. } => 2.0 * radius,
            TargetKind::Ellipsoid { semiaxes } => 2.0 * semiaxes.iter().cloned().fold(0.0, f64::max),
            TargetKind::FlatEuclidean { .. } => 1.0,
            TargetKind::FlatTorus { periods } => periods.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// First-order distance from `y` to `N`.
    pub fn distance_defect(&self, y: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::RoundSphere { radius, .. } => (norm(y) - radius).abs(),
            TargetKind::Ellipsoid { .. } => {
                let mut f = -1.0;
                let mut g2 = 0.0;
                for (yi, di) in y.iter().zip(&self.quadric) {
                    f += di * yi * yi;
                    g2 += (di * yi) * (di * yi);
                }
                if g2 == 0.0 {
                    f64::INFINITY
                } else {
                    f.abs() / (2.0 * g2.sqrt())
                }
            }
            _ => 0.0,
        }
    }

    pub fn is_on_manifold(&self, y: &[f64]) -> bool {
        y.len() == self.ambient_dim && self.distance_defect(y) <= self.tol_on_manifold
    }

    fn check_on(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, target ambient dimension is {}",
                y.len(),
                self.ambient_dim
            )));
        }
        let defect = self.distance_defect(y);
        if defect > self.tol_on_manifold {
            return Err(Error::PointOffManifold { defect });
        }
        Ok(())
    }

    /// Nearest-point projection onto `N`.
    pub fn project_point(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = y.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, y: &mut [f64]) -> Result<()> {
        if y.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, target ambient dimension is {}",
                y.len(),
                self.ambient_dim
            )));
        }
        match &self.kind {
            TargetKind::RoundSphere { radius, .. } => {
                let r = norm(y);
                let distance = (r - radius).abs();
                // exterior points always have a unique nearest point
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::OutsideTubularNeighborhood { distance, radius: *radius });
                }
                let s = radius / r;
                y.iter_mut().for_each(|v| *v *= s);
                Ok(())
            }
            TargetKind::Ellipsoid { semiaxes } => {
                let x = project_ellipsoid(semiaxes, y);
                let distance = dist(&x, y);
                let on = {
                    let f: f64 = x.iter().zip(&self.quadric).map(|(v, d)| d * v * v).sum();
                    (f - 1.0).abs() < 1e-12
                };
                let inside = y.iter().zip(&self.quadric).map(|(v, d)| d * v * v).sum::<f64>() < 1.0;
                if !on || !distance.is_finite() || (inside && distance >= self.tubular_radius) {
                    let distance = if on { distance } else { f64::INFINITY };
                    return Err(Error::OutsideTubularNeighborhood {
                        distance,
                        radius: self.tubular_radius,
                    });
                }
                y.copy_from_slice(&x);
                Ok(())
            }
            _ => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::OutsideTubularNeighborhood {
                        distance: f64::INFINITY,
                        radius: f64::INFINITY,
                    });
                }
                Ok(())
            }
        }
    }

    /// Unit normal at `y` for curved kinds (zero-length for flat kinds).
    pub(crate) fn unit_normal(&self, y: &[f64], out: &mut [f64]) -> f64 {
        if self.is_flat() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return 0.0;
        }
        let mut n2 = 0.0;
        for i in 0..self.ambient_dim {
            out[i] = self.quadric[i] * y[i];
            n2 += out[i] * out[i];
        }
        let n = n2.sqrt();
        out.iter_mut().for_each(|v| *v /= n);
        n
    }

    /// Unit normal of a hypersurface target; `None` for flat kinds.
    pub fn normal(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_on(y)?;
        if self.is_flat() {
            return Ok(None);
        }
        let mut n = vec![0.0; self.ambient_dim];
        self.unit_normal(y, &mut n);
        Ok(Some(n))
    }

    /// In-place tangential projection without on-manifold checks.
    pub(crate) fn project_tangent_unchecked(&self, y: &[f64], v: &mut [f64]) {
        if self.is_flat() {
            return;
        }
        let k = self.ambient_dim;
        let mut n = [0.0; 16];
        self.unit_normal(y, &mut n[..k]);
        let c: f64 = v.iter().zip(&n[..k]).map(|(a, b)| a * b).sum();
        for i in 0..k {
            v[i] -= c * n[i];
        }
    }

    pub fn tangent_project(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_on(y)?;
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch("vector length".into()));
        }
        let mut out = v.to_vec();
        self.project_tangent_unchecked(y, &mut out);
        Ok(out)
    }

    pub(crate) fn second_fundamental_form_unchecked(
        &self,
        y: &[f64],
        x: &[f64],
        z: &[f64],
        out: &mut [f64],
    ) {
        if self.is_flat() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let k = self.ambient_dim;
        let mut dy2 = 0.0;
        let mut xdz = 0.0;
        for i in 0..k {
            let d = self.quadric[i];
            dy2 += (d * y[i]) * (d * y[i]);
            xdz += x[i] * d * z[i];
        }
        for i in 0..k {
            out[i] = -xdz / dy2 * self.quadric[i] * y[i];
        }
    }

    /// `A(X, Y)`, the normal-valued second fundamental form.
    pub fn second_fundamental_form(&self, y: &[f64], x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_on(y)?;
        let mut out = vec![0.0; self.ambient_dim];
        self.second_fundamental_form_unchecked(y, x, z, &mut out);
        Ok(out)
    }

    /// Adds the tangent vector `w ↦ ⟨g, A(v, w)⟩` (Weingarten map applied to
    /// the normal part of `g`) scaled by `scale` into `out`.
    pub(crate) fn add_shape_term(&self, y: &[f64], g: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        if self.is_flat() {
            return;
        }
        let k = self.ambient_dim;
        let mut dy2 = 0.0;
        let mut gdy = 0.0;
        for i in 0..k {
            let dyi = self.quadric[i] * y[i];
            dy2 += dyi * dyi;
            gdy += g[i] * dyi;
        }
        let c = -gdy / dy2 * scale;
        let mut dv = [0.0; 16];
        for i in 0..k {
            dv[i] = self.quadric[i] * v[i];
        }
        self.project_tangent_unchecked(y, &mut dv[..k]);
        for i in 0..k {
            out[i] += c * dv[i];
        }
    }

    pub(crate) fn curvature_unchecked(&self, y: &[f64], x: &[f64], yv: &[f64], z: &[f64], w: &[f64]) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let k = self.ambient_dim;
        let mut a = [[0.0; 16]; 4];
        self.second_fundamental_form_unchecked(y, x, z, &mut a[0][..k]);
        self.second_fundamental_form_unchecked(y, yv, w, &mut a[1][..k]);
        self.second_fundamental_form_unchecked(y, x, w, &mut a[2][..k]);
        self.second_fundamental_form_unchecked(y, yv, z, &mut a[3][..k]);
        dot(&a[0][..k], &a[1][..k]) - dot(&a[2][..k], &a[3][..k])
    }

    /// Riemann tensor `R(X,Y,Z,W) = ⟨A(X,Z),A(Y,W)⟩ − ⟨A(X,W),A(Y,Z)⟩`.
    pub fn curvature(&self, y: &[f64], x: &[f64], yv: &[f64], z: &[f64], w: &[f64]) -> Result<f64> {
        self.check_on(y)?;
        Ok(self.curvature_unchecked(y, x, yv, z, w))
    }

    /// `Ric(X, Z) = Σ_a R(X, e_a, Z, e_a)` over an orthonormal tangent frame.
    pub fn ricci(&self, y: &[f64], x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_on(y)?;
        Ok(self
            .tangent_frame_unchecked(y)
            .iter()
            .map(|e| self.curvature_unchecked(y, x, e, z, e))
            .sum())
    }

    pub(crate) fn tangent_frame_unchecked(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let k = self.ambient_dim;
        if self.is_flat() {
            return (0..k)
                .map(|i| {
                    let mut e = vec![0.0; k];
                    e[i] = 1.0;
                    e
                })
                .collect();
        }
        let mut n = vec![0.0; k];
        self.unit_normal(y, &mut n);
        // axes least aligned with the normal first; ties keep index order
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()));
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k - 1);
        for &axis in &order {
            if frame.len() == k - 1 {
                break;
            }
            let mut e = vec![0.0; k];
            e[axis] = 1.0;
            for _ in 0..2 {
                let c = dot(&e, &n);
                axpy(-c, &n, &mut e);
                for f in &frame {
                    let c = dot(&e, f);
                    axpy(-c, f, &mut e);
                }
            }
            let len = norm(&e);
            if len > 1e-3 {
                e.iter_mut().for_each(|v| *v /= len);
                frame.push(e);
            }
        }
        frame
    }

    /// Orthonormal basis of `T_yN` by Gram–Schmidt of projected axes.
    pub fn tangent_frame(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_on(y)?;
        Ok(self.tangent_frame_unchecked(y))
    }
}

fn project_ellipsoid(a: &[f64], y: &[f64]) -> Vec<f64> {
    // x_i = a_i² y_i / (a_i² + t) with g(t) = Σ (a_i y_i/(a_i² + t))² − 1 = 0,
    // g strictly decreasing on (−a_min², ∞)
    let amin2 = a.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let amax = a.iter().cloned().fold(0.0, f64::max);
    let g = |t: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut dv = 0.0;
        for (ai, yi) in a.iter().zip(y) {
            let q = ai * yi / (ai * ai + t);
            v += q * q;
            dv -= 2.0 * q * q / (ai * ai + t);
        }
        (v, dv)
    };
    let mut lo = -amin2;
    let mut hi = amax * norm(y) + amax * amax;
    let mut t = 0.0;
    for _ in 0..200 {
        let (v, dv) = g(t);
        if v > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if v.abs() < 1e-16 {
            break;
        }
        let mut next = t - v / dv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-16 * (1.0 + t.abs()) {
            t = next;
            break;
        }
        t = next;
    }
    a.iter().zip(y).map(|(ai, yi)| ai * ai * yi / (ai * ai + t)).collect()
}

/// Coefficient callbacks of a two-form `ω = Σ_{i<j} ω_ij dy^i ∧ dy^j`.
///
/// `omega` fills the antisymmetric `K×K` matrix `Ω` (row-major). `d_omega`
/// fills `∂_l Ω_ij` at `l·K² + i·K + j`; `dd_omega` fills `∂_l ∂_p Ω_ij` at
/// `(l·K + p)·K² + i·K + j`. The defaults use central differences.
pub trait FormCoefficients: Send + Sync + fmt::Debug {
    fn ambient_dim(&self) -> usize;

    fn omega(&self, y: &[f64], out: &mut [f64]);

    fn d_omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.ambient_dim();
        let kk = k * k;
        let mut yp = y.to_vec();
        let mut plus = vec![0.0; kk];
        let mut minus = vec![0.0; kk];
        for l in 0..k {
            let h = 1e-5 * (1.0 + y[l].abs());
            yp[l] = y[l] + h;
            self.omega(&yp, &mut plus);
            yp[l] = y[l] - h;
            self.omega(&yp, &mut minus);
            yp[l] = y[l];
            for m in 0..kk {
                out[l * kk + m] = (plus[m] - minus[m]) / (2.0 * h);
            }
        }
    }

    fn dd_omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.ambient_dim();
        let kk = k * k;
        let mut yp = y.to_vec();
        let mut buf = vec![0.0; kk];
        for l in 0..k {
            for p in 0..k {
                let hl = 1e-4 * (1.0 + y[l].abs());
                let hp = 1e-4 * (1.0 + y[p].abs());
                let base = (l * k + p) * kk;
                out[base..base + kk].iter_mut().for_each(|v| *v = 0.0);
                for (sl, sp, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    yp.copy_from_slice(y);
                    yp[l] += sl * hl;
                    yp[p] += sp * hp;
                    self.omega(&yp, &mut buf);
                    for m in 0..kk {
                        out[base + m] += w * buf[m] / (4.0 * hl * hp);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct ZeroForm {
    k: usize,
}

impl FormCoefficients for ZeroForm {
    fn ambient_dim(&self) -> usize {
        self.k
    }
    fn omega(&self, _y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn d_omega(&self, _y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn dd_omega(&self, _y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `c/3 (y⁰ dy¹∧dy² + y¹ dy²∧dy⁰ + y² dy⁰∧dy¹)` on the first three coordinates.
#[derive(Clone, Debug)]
struct VolumeForm {
    k: usize,
    scale: f64,
}

impl FormCoefficients for VolumeForm {
    fn ambient_dim(&self) -> usize {
        self.k
    }
    fn omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.k;
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = self.scale / 3.0;
        for (i, j, m) in [(1, 2, 0), (2, 0, 1), (0, 1, 2)] {
            out[i * k + j] = c * y[m];
            out[j * k + i] = -c * y[m];
        }
    }
    fn d_omega(&self, _y: &[f64], out: &mut [f64]) {
        let k = self.k;
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = self.scale / 3.0;
        for (i, j, m) in [(1, 2, 0), (2, 0, 1), (0, 1, 2)] {
            out[m * k * k + i * k + j] = c;
            out[m * k * k + j * k + i] = -c;
        }
    }
    fn dd_omega(&self, _y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `Σ_i a cos(f y^{i+2}) dy^i ∧ dy^{i+1}`, indices mod K.
#[derive(Clone, Debug)]
struct CosineForm {
    k: usize,
    amplitude: f64,
    frequency: f64,
}

impl CosineForm {
    fn pairs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let k = self.k;
        (0..k).map(move |i| (i, (i + 1) % k, (i + 2) % k))
    }
}

impl FormCoefficients for CosineForm {
    fn ambient_dim(&self) -> usize {
        self.k
    }
    fn omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.k;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, m) in self.pairs() {
            let c = self.amplitude * (self.frequency * y[m]).cos();
            out[i * k + j] += c;
            out[j * k + i] -= c;
        }
    }
    fn d_omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.k;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, m) in self.pairs() {
            let c = -self.amplitude * self.frequency * (self.frequency * y[m]).sin();
            out[m * k * k + i * k + j] += c;
            out[m * k * k + j * k + i] -= c;
        }
    }
    fn dd_omega(&self, y: &[f64], out: &mut [f64]) {
        let k = self.k;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, m) in self.pairs() {
            let f = self.frequency;
            let c = -self.amplitude * f * f * (f * y[m]).cos();
            let base = (m * k + m) * k * k;
            out[base + i * k + j] += c;
            out[base + j * k + i] -= c;
        }
    }
}

type CoeffFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

struct CustomForm {
    k: usize,
    f: Box<CoeffFn>,
}

impl fmt::Debug for CustomForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomForm").field("k", &self.k).finish()
    }
}

impl FormCoefficients for CustomForm {
    fn ambient_dim(&self) -> usize {
        self.k
    }
    fn omega(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out);
    }
}

#[derive(Debug)]
struct ScaledForm {
    inner: Arc<dyn FormCoefficients>,
    c: f64,
}

impl FormCoefficients for ScaledForm {
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim()
    }
    fn omega(&self, y: &[f64], out: &mut [f64]) {
        self.inner.omega(y, out);
        out.iter_mut().for_each(|o| *o *= self.c);
    }
    fn d_omega(&self, y: &[f64], out: &mut [f64]) {
        self.inner.d_omega(y, out);
        out.iter_mut().for_each(|o| *o *= self.c);
    }
    fn dd_omega(&self, y: &[f64], out: &mut [f64]) {
        self.inner.dd_omega(y, out);
        out.iter_mut().for_each(|o| *o *= self.c);
    }
}

/// A two-form on the ambient space with the derived tensor `H`.
#[derive(Clone, Debug)]
pub struct TwoFormField {
    name: String,
    coeffs: Arc<dyn FormCoefficients>,
}

impl TwoFormField {
    pub fn zero(k: usize) -> Self {
        Self { name: "zero".into(), coeffs: Arc::new(ZeroForm { k }) }
    }

    /// Volume-type form whose pullback integrates to `scale` times the signed
    /// enclosed volume (projected to the first three coordinates).
    /// `H^k_ij = scale · ε_kij` on those coordinates.
    pub fn volume(k: usize, scale: f64) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidParameter("volume form needs K >= 3".into()));
        }
        Ok(Self { name: "volume".into(), coeffs: Arc::new(VolumeForm { k, scale }) })
    }

    /// Volume form normalized so that a round sphere of radius `1/h0` in ℝ³ is
    /// critical for `E + ∫u*ω`.
    pub fn cmc(h0: f64) -> Result<Self> {
        let mut f = Self::volume(3, -2.0 * h0)?;
        f.name = "cmc".into();
        Ok(f)
    }

    pub fn cosine(k: usize, amplitude: f64, frequency: f64) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidParameter("cosine form needs K >= 3".into()));
        }
        Ok(Self {
            name: "cosine".into(),
            coeffs: Arc::new(CosineForm { k, amplitude, frequency }),
        })
    }

    /// User-supplied coefficients; derivatives by central differences.
    /// The callback must fill an antisymmetric row-major `K×K` matrix.
    pub fn custom<F>(name: &str, k: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { name: name.into(), coeffs: Arc::new(CustomForm { k, f: Box::new(f) }) }
    }

    pub fn from_coefficients(name: &str, coeffs: Arc<dyn FormCoefficients>) -> Self {
        Self { name: name.into(), coeffs }
    }

    /// The form `c·ω`, with exact derivatives of the original scaled.
    pub fn scaled(&self, c: f64) -> Self {
        if c == 1.0 {
            return self.clone();
        }
        let name = if self.is_zero() { "zero".to_string() } else { format!("{}*{c}", self.name) };
        Self { name, coeffs: Arc::new(ScaledForm { inner: self.coeffs.clone(), c }) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_dim(&self) -> usize {
        self.coeffs.ambient_dim()
    }

    pub fn is_zero(&self) -> bool {
        self.name == "zero"
    }

    pub fn omega_into(&self, y: &[f64], out: &mut [f64]) {
        self.coeffs.omega(y, out);
    }

    pub fn d_omega_into(&self, y: &[f64], out: &mut [f64]) {
        self.coeffs.d_omega(y, out);
    }

    pub fn dd_omega_into(&self, y: &[f64], out: &mut [f64]) {
        self.coeffs.dd_omega(y, out);
    }

    pub fn omega(&self, y: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let mut out = vec![0.0; k * k];
        self.coeffs.omega(y, &mut out);
        out
    }

    pub fn d_omega(&self, y: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let mut out = vec![0.0; k * k * k];
        self.coeffs.d_omega(y, &mut out);
        out
    }

    pub fn dd_omega(&self, y: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let mut out = vec![0.0; k * k * k * k];
        self.coeffs.dd_omega(y, &mut out);
        out
    }

    /// `H^k_ij = ∂_kω_ij + ∂_iω_jk + ∂_jω_ki`, stored at `k·K² + i·K + j`.
    pub fn h_tensor(&self, y: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let d = self.d_omega(y);
        cyclic_sum(&d, k)
    }

    /// `∂_l H^k_ij`, stored at `l·K³ + k·K² + i·K + j`.
    pub fn dh_tensor(&self, y: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let k3 = k * k * k;
        let dd = self.dd_omega(y);
        let mut out = vec![0.0; k * k3];
        let mut slice = vec![0.0; k3];
        for l in 0..k {
            // ∂_l ∂_m Ω_ij laid out as [m][i][j]
            for m in 0..k {
                let src = (l * k + m) * k * k;
                slice[m * k * k..(m + 1) * k * k].copy_from_slice(&dd[src..src + k * k]);
            }
            out[l * k3..(l + 1) * k3].copy_from_slice(&cyclic_sum(&slice, k));
        }
        out
    }

    /// `H(v1, v2)^k = Σ_ij H^k_ij v1^i v2^j` (ambient vector).
    pub fn induced_h(&self, y: &[f64], v1: &[f64], v2: &[f64]) -> Vec<f64> {
        let k = self.ambient_dim();
        let h = self.h_tensor(y);
        (0..k)
            .map(|c| {
                let mut s = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        s += h[c * k * k + i * k + j] * v1[i] * v2[j];
                    }
                }
                s
            })
            .collect()
    }

    /// `⟨(∇_V H)(v1, v2), V⟩` with the Levi-Civita connection of `N`.
    pub fn grad_h(&self, target: &TargetManifold, y: &[f64], v1: &[f64], v2: &[f64], v: &[f64]) -> f64 {
        self.covariant_dh(target, y, v, v, v1, v2)
    }

    /// `(∇_X h)(a, b, c)` for the three-form `h(a, b, c) = ⟨H(b, c), a⟩`.
    pub fn covariant_dh(&self, target: &TargetManifold, y: &[f64], x: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let k = self.ambient_dim();
        let k3 = k * k * k;
        let h = self.h_tensor(y);
        let dh = self.dh_tensor(y);
        let form = |t: &[f64], a: &[f64], b: &[f64], c: &[f64]| -> f64 {
            let mut s = 0.0;
            for kk in 0..k {
                for i in 0..k {
                    for j in 0..k {
                        s += t[kk * k * k + i * k + j] * a[kk] * b[i] * c[j];
                    }
                }
            }
            s
        };
        let mut dxh = vec![0.0; k3];
        for l in 0..k {
            for m in 0..k3 {
                dxh[m] += x[l] * dh[l * k3 + m];
            }
        }
        let mut total = form(&dxh, a, b, c);
        if !target.is_flat() {
            let mut s = vec![0.0; k];
            target.second_fundamental_form_unchecked(y, x, a, &mut s);
            total += form(&h, &s, b, c);
            target.second_fundamental_form_unchecked(y, x, b, &mut s);
            total += form(&h, a, &s, c);
            target.second_fundamental_form_unchecked(y, x, c, &mut s);
            total += form(&h, a, b, &s);
        }
        total
    }
}

fn cyclic_sum(d: &[f64], k: usize) -> Vec<f64> {
    let kk = k * k;
    let mut h = vec![0.0; k * kk];
    for c in 0..k {
        for i in 0..k {
            for j in 0..k {
                h[c * kk + i * k + j] = d[c * kk + i * k + j] + d[i * kk + j * k + c] + d[j * kk + c * k + i];
            }
        }
    }
    h
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}
