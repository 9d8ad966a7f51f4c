use serde::{Deserialize, Serialize};

use super::{SolveReport, Termination, TraceRow};
use crate::energy::{mass_dot, MapState, Problem, TangentField};
use crate::error::Result;
use crate::linalg::minres;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    pub tol_grad: f64,
    pub max_iters: usize,
    pub minres_max_iters: usize,
    /// Largest per-vertex displacement of a step, in target length units.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol_grad: 1e-8, max_iters: 40, minres_max_iters: 2000, max_step: 0.2 }
    }
}

/// Newton iteration on the gradient with MINRES inner solves.
///
/// Converges to the nearby critical point whatever its index, so it is used
/// to sharpen saddle points found by the min-max search. Steps are damped by
/// backtracking on the gradient norm.
pub fn refine_critical(pb: &Problem, u0: &MapState, opts: &NewtonOptions) -> Result<SolveReport> {
    pb.check(u0)?;
    let k = pb.k();
    let mesh = pb.mesh;
    let mut u = u0.clone();
    u.project_onto(pb.target)?;
    let mut g = pb.gradient(&u);
    let mut gn = pb.grad_norm(&g);
    let mut e = pb.energy(&u);
    let mut trace = vec![TraceRow { iter: 0, energy: e, grad_norm: gn, step: 0.0 }];
    let cap = opts.max_step * pb.target.length_scale();
    let mut iterations = 0;
    let termination = loop {
        if gn <= opts.tol_grad {
            break Termination::Converged;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxItersExceeded;
        }
        let h = pb.hessian_at(&u);
        let rhs: Vec<f64> = g.as_slice().iter().map(|x| -x).collect();
        let eta = gn.clamp(1e-12, 1e-2);
        let sol = minres(
            |v| h.apply(&TangentField::from_vec(k, v.to_vec())).into_vec(),
            |a, b| mass_dot(mesh, k, a, b),
            &rhs,
            eta,
            opts.minres_max_iters,
        );
        let mut d = sol.x;
        for (x, y) in d.chunks_mut(k).zip(u.as_slice().chunks(k)) {
            pb.target.project_tangent_unchecked(y, x);
        }
        let dmax = d.chunks(k).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let mut t: f64 = if dmax > cap { cap / dmax } else { 1.0 };
        let dir = TangentField::from_vec(k, d);
        let mut accepted = None;
        for _ in 0..30 {
            if let Ok(un) = u.retract(pb.target, &dir, t) {
                let gnew = pb.gradient(&un);
                let gnn = pb.grad_norm(&gnew);
                if gnn < (1.0 - 1e-4 * t) * gn {
                    accepted = Some((un, gnew, gnn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((un, gnew, gnn)) = accepted else {
            break Termination::LineSearchStalled;
        };
        u = un;
        g = gnew;
        gn = gnn;
        e = pb.energy(&u);
        iterations += 1;
        trace.push(TraceRow { iter: iterations, energy: e, grad_norm: gn, step: t });
    };
    Ok(SolveReport {
        state: u,
        iterations,
        grad_norm: gn,
        energy: e,
        trace,
        converged: termination == Termination::Converged,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::FunctionalParams;
    use crate::mesh::DomainMesh;
    use crate::target::{TargetManifold, TwoFormField};

    #[test]
    fn finds_cmc_sphere_saddle() {
        // the radius-1 sphere is a mountain pass of E + ∫u*ω for H0 = 1
        let m = DomainMesh::icosphere(2).unwrap();
        let t = TargetManifold::flat_euclidean(3).unwrap();
        let f = TwoFormField::cmc(1.0).unwrap();
        let pb = Problem::new(&m, &t, &f, FunctionalParams::harmonic(1.0)).unwrap();
        let u0 = MapState::from_fn(&m, 3, |x| vec![1.08 * x[0], 0.95 * x[1], 1.02 * x[2]]);
        let r = refine_critical(&pb, &u0, &NewtonOptions::default()).unwrap();
        assert!(r.converged, "{:?} {}", r.termination, r.grad_norm);
        let c: Vec<f64> = (0..3)
            .map(|i| r.state.as_slice().iter().skip(i).step_by(3).sum::<f64>() / m.num_vertices() as f64)
            .collect();
        for y in r.state.as_slice().chunks(3) {
            let rad = ((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2) + (y[2] - c[2]).powi(2)).sqrt();
            assert!((rad - 1.0).abs() < 0.05, "radius {rad}");
        }
    }
}
