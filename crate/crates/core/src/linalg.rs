//! Sparse symmetric matrices, inertia counting and Krylov solvers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric matrix in compressed sparse row form (both triangles stored).
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; rows are sorted by column.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Largest absolute row sum (a bound on the spectral radius).
    pub fn gershgorin_radius(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Reverse Cuthill–McKee ordering; `perm[new] = old`.
    pub fn rcm(&self) -> Vec<usize> {
        let n = self.n;
        let degree: Vec<usize> = (0..n).map(|i| self.row_ptr[i + 1] - self.row_ptr[i]).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
            visited[start] = true;
            let mut head = order.len();
            order.push(start);
            while head < order.len() {
                let v = order[head];
                head += 1;
                let mut nbrs: Vec<usize> = self.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
                nbrs.sort_by_key(|&j| (degree[j], j));
                nbrs.dedup();
                for j in nbrs {
                    if !visited[j] {
                        visited[j] = true;
                        order.push(j);
                    }
                }
            }
        }
        order.reverse();
        order
    }
}

/// `LDLᵀ` of a symmetric banded matrix `A − σI` (no pivoting) under a fixed
/// permutation. Used for Sylvester inertia counts and shift-invert solves.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    // lower band, row-major: l[i * (bw + 1) + (i - j)] for j in [i − bw, i]
    band: Vec<f64>,
}

impl BandedLdl {
    pub fn factor(a: &CsrMatrix, perm: &[usize], shift: f64) -> Result<Self> {
        let n = a.n();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0;
        for i in 0..n {
            for (j, _) in a.row(i) {
                bw = bw.max(inv[i].abs_diff(inv[j]));
            }
        }
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pj <= pi {
                    band[pi * w + (pi - pj)] += v;
                }
            }
            band[inv[i] * w] -= shift;
        }
        let scale = a.gershgorin_radius().max(1e-300);
        // column-oriented LDLᵀ: for each row i, L_ij for j < i, then D_i
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..i {
                // A_ij − Σ_k L_ik D_k L_jk, k in [max(i,j)−bw, j)
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = band[i * w + (i - j)];
                for k in k0..j {
                    s -= band[i * w + (i - k)] * band[k * w] * band[j * w + (j - k)];
                }
                band[i * w + (i - j)] = s / band[j * w];
            }
            let mut d = band[i * w];
            for k in j0..i {
                let l = band[i * w + (i - k)];
                d -= l * l * band[k * w];
            }
            if d.abs() < 1e-14 * scale {
                // exactly singular shift; nudge so the count stays defined
                d = if d < 0.0 { -1e-14 * scale } else { 1e-14 * scale };
            }
            if !d.is_finite() {
                return Err(Error::EigSolverFailure("non-finite pivot in LDL factorization".into()));
            }
            band[i * w] = d;
        }
        Ok(Self { n, bw, perm: perm.to_vec(), band })
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Number of negative pivots = number of eigenvalues below the shift.
    pub fn negative_count(&self) -> usize {
        let w = self.bw + 1;
        (0..self.n).filter(|&i| self.band[i * w] < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w = self.bw + 1;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = y[i];
            for j in j0..i {
                s -= self.band[i * w + (i - j)] * y[j];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.band[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for r in i + 1..(i + self.bw + 1).min(n) {
                s -= self.band[r * w + (r - i)] * y[r];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Eigenvalues of `A` nearest to `shift`, by shift-invert Lanczos with full
/// reorthogonalization. Returned ascending.
pub fn shift_invert_eigenvalues(a: &CsrMatrix, shift: f64, nev: usize, seed: u64) -> Result<Vec<f64>> {
    let n = a.n();
    let nev = nev.min(n);
    if nev == 0 {
        return Ok(Vec::new());
    }
    let perm = a.rcm();
    let ldl = BandedLdl::factor(a, &perm, shift)?;
    let max_m = n.min((4 * nev + 40).max(80));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_m + 1);
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    // deterministic start vector
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    basis.push(v);
    let mut ritz = Vec::new();
    for m in 0..max_m {
        let mut w = ldl.solve(&basis[m]);
        let a_m = dot(&w, &basis[m]);
        alpha.push(a_m);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let b_m = norm(&w);
        let done_space = b_m < 1e-12 * a_m.abs().max(1e-300) || m + 1 == max_m;
        if (m + 1 >= nev && ((m + 1) % 10 == 0)) || done_space {
            let (vals, resid) = tridiag_eig(&alpha, &beta, b_m);
            // largest |θ| correspond to eigenvalues nearest the shift
            let mut idx: Vec<usize> = (0..vals.len()).collect();
            idx.sort_by(|&i, &j| vals[j].abs().total_cmp(&vals[i].abs()));
            let chosen: Vec<usize> = idx.into_iter().take(nev).collect();
            let converged = chosen.iter().all(|&i| resid[i] <= 1e-10 * vals[i].abs().max(1e-300));
            ritz = chosen.iter().map(|&i| shift + 1.0 / vals[i]).collect();
            if converged || done_space {
                break;
            }
        }
        beta.push(b_m);
        w.iter_mut().for_each(|x| *x /= b_m);
        basis.push(w);
    }
    ritz.sort_by(f64::total_cmp);
    Ok(ritz)
}

fn tridiag_eig(alpha: &[f64], beta: &[f64], last_beta: f64) -> (Vec<f64>, Vec<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let resid = (0..m).map(|i| (last_beta * eig.eigenvectors[(m - 1, i)]).abs()).collect();
    (eig.eigenvalues.iter().cloned().collect(), resid)
}

/// Ascending eigenvalues of a dense symmetric matrix.
pub fn dense_eigenvalues(a: DMatrix<f64>) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigSolverFailure("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(a, 1e-14, 0)
        .ok_or_else(|| Error::EigSolverFailure("symmetric eigensolver did not converge".into()))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// MINRES for `A x = b` with `A` self-adjoint in the inner product `ip`.
pub fn minres<A, I>(apply: A, ip: I, b: &[f64], rtol: f64, max_iter: usize) -> MinresOutcome
where
    A: Fn(&[f64]) -> Vec<f64>,
    I: Fn(&[f64], &[f64]) -> f64,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = ip(b, b).max(0.0).sqrt();
    if beta1 == 0.0 {
        return MinresOutcome { x, iterations: 0, residual: 0.0 };
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut itn = 0;
    while itn < max_iter {
        itn += 1;
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|t| s * t).collect();
        y = apply(&v);
        if itn >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = ip(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = ip(&r2, &r2).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::take(&mut w2);
        w2 = std::mem::take(&mut w);
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
        axpy(phi, &w, &mut x);
        if phibar <= rtol * beta1 || beta == 0.0 {
            break;
        }
    }
    MinresOutcome { x, iterations: itn, residual: phibar / beta1 }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 - shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    fn exact(n: usize, shift: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos() - shift)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn sturm_count_matches_spectrum() {
        let n = 60;
        let a = path_laplacian(n, 1.3);
        let ev = exact(n, 1.3);
        let perm: Vec<usize> = (0..n).rev().collect();
        for s in [-0.5, 0.0, 0.2, 1.0] {
            let ldl = BandedLdl::factor(&a, &perm, s).unwrap();
            assert_eq!(ldl.negative_count(), ev.iter().filter(|&&e| e < s).count());
        }
    }

    #[test]
    fn ldl_solves() {
        let a = path_laplacian(30, 0.7);
        let perm = a.rcm();
        let ldl = BandedLdl::factor(&a, &perm, 0.0).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let x = ldl.solve(&b);
        let r = a.mul_vec(&x);
        for (p, q) in r.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_invert_finds_lowest() {
        let n = 200;
        let a = path_laplacian(n, 0.05);
        let ev = exact(n, 0.05);
        let got = shift_invert_eigenvalues(&a, ev[0] - 1e-3, 5, 1).unwrap();
        for (g, e) in got.iter().zip(&ev[..5]) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn minres_solves_indefinite() {
        let a = path_laplacian(40, 1.0);
        let b: Vec<f64> = (0..40).map(|i| 1.0 + (i % 3) as f64).collect();
        let out = minres(|v| a.mul_vec(v), dot, &b, 1e-12, 500);
        let r = a.mul_vec(&out.x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-9 * norm(&b));
    }
}
