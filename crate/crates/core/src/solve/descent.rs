use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{SolveReport, Termination, TraceRow};
use crate::energy::{mass_dot, MapState, Problem, TangentField};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentOptions {
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Number of stored L-BFGS pairs; 0 gives plain projected steepest descent.
    pub memory: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Largest per-vertex displacement of a trial step, in target length units.
    pub max_step: f64,
    /// Energy changes below this relative size are treated as rounding noise.
    pub noise_rel: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-6,
            max_iters: 5000,
            memory: 8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_step: 0.1,
            max_backtracks: 60,
            noise_rel: 1e-13,
        }
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
}

/// Projected descent with Armijo backtracking and retraction by projection.
///
/// Directions come from a Riemannian L-BFGS two-loop recursion in the mass
/// inner product (stored pairs are transported by tangential projection);
/// whenever that direction fails to be a descent direction, or its line
/// search fails, the step falls back to the negative gradient.
pub fn descend(pb: &Problem, u0: &MapState, opts: &DescentOptions) -> Result<SolveReport> {
    pb.check(u0)?;
    let mesh = pb.mesh;
    let k = pb.k();
    let mut u = u0.clone();
    u.project_onto(pb.target)?;
    let mut e = pb.energy(&u);
    let mut g = pb.gradient(&u);
    let mut gn = pb.grad_norm(&g);
    let mut trace = vec![TraceRow { iter: 0, energy: e, grad_norm: gn, step: 0.0 }];
    let mut mem: VecDeque<Pair> = VecDeque::new();
    let cap = opts.max_step * pb.target.length_scale();
    let mut t_sd = f64::INFINITY;
    let mut iterations = 0;
    let ip = |a: &[f64], b: &[f64]| mass_dot(mesh, k, a, b);

    let termination = loop {
        if gn <= opts.tol_grad {
            break Termination::Converged;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxItersExceeded;
        }
        for p in mem.iter_mut() {
            project_all(pb, &u, &mut p.s);
            project_all(pb, &u, &mut p.y);
        }
        let mut quasi_newton = !mem.is_empty();
        let accepted = loop {
            let mut d: Vec<f64> = if quasi_newton {
                two_loop(&mem, g.as_slice(), &ip)
            } else {
                g.as_slice().iter().map(|x| -x).collect()
            };
            project_all(pb, &u, &mut d);
            let slope = ip(g.as_slice(), &d);
            if quasi_newton && slope >= -1e-12 * gn * ip(&d, &d).sqrt() {
                mem.clear();
                quasi_newton = false;
                continue;
            }
            let dmax = d.chunks(k).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
            let mut t = if quasi_newton { 1.0 } else { (2.0 * t_sd).min(1.0) };
            if dmax * t > cap {
                t = cap / dmax;
            }
            let dir = TangentField::from_vec(k, d);
            let mut found = None;
            for _ in 0..opts.max_backtracks {
                if let Ok(un) = u.retract(pb.target, &dir, t) {
                    let en = pb.energy(&un);
                    if en <= e + opts.armijo_c * t * slope {
                        found = Some((un, en, t));
                        break;
                    }
                    if (en - e).abs() <= opts.noise_rel * e.abs().max(1.0) {
                        let gnew = pb.gradient(&un);
                        if pb.grad_norm(&gnew) < gn {
                            found = Some((un, en.min(e), t));
                            break;
                        }
                    }
                }
                t *= opts.backtrack;
            }
            match found {
                Some((un, en, t)) => break Some((un, en, t, dir, quasi_newton)),
                None if quasi_newton => {
                    mem.clear();
                    quasi_newton = false;
                }
                None => break None,
            }
        };
        let Some((un, en, t, dir, quasi_newton)) = accepted else {
            break Termination::LineSearchStalled;
        };
        if !quasi_newton {
            t_sd = t;
        }
        let gnew = pb.gradient(&un);
        if opts.memory > 0 {
            let mut s: Vec<f64> = dir.as_slice().iter().map(|x| t * x).collect();
            project_all(pb, &un, &mut s);
            let mut gold = g.into_vec();
            project_all(pb, &un, &mut gold);
            let y: Vec<f64> = gnew.as_slice().iter().zip(&gold).map(|(a, b)| a - b).collect();
            let sy = ip(&s, &y);
            if sy > 1e-12 * ip(&s, &s).sqrt() * ip(&y, &y).sqrt() {
                mem.push_back(Pair { s, y });
                if mem.len() > opts.memory {
                    mem.pop_front();
                }
            }
        }
        u = un;
        e = en;
        g = gnew;
        gn = pb.grad_norm(&g);
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

fn project_all(pb: &Problem, u: &MapState, v: &mut [f64]) {
    let k = pb.k();
    for (x, y) in v.chunks_mut(k).zip(u.as_slice().chunks(k)) {
        pb.target.project_tangent_unchecked(y, x);
    }
}

fn two_loop(mem: &VecDeque<Pair>, g: &[f64], ip: &dyn Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for p in mem.iter().rev() {
        let rho = 1.0 / ip(&p.s, &p.y);
        let a = rho * ip(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(x, y)| *x -= a * y);
        alphas.push((a, rho));
    }
    let last = mem.back().unwrap();
    let gamma = ip(&last.s, &last.y) / ip(&last.y, &last.y);
    q.iter_mut().for_each(|x| *x *= gamma);
    for (p, (a, rho)) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * ip(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(x, s)| *x += (a - b) * s);
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{dirichlet, FunctionalParams};
    use crate::mesh::DomainMesh;
    use crate::target::{TargetManifold, TwoFormField};
    use std::f64::consts::PI;

    #[test]
    fn constant_map_is_immediately_critical() {
        let m = DomainMesh::icosphere(2).unwrap();
        let t = TargetManifold::round_sphere(3, 1.0).unwrap();
        let f = TwoFormField::zero(4);
        let pb = Problem::new(&m, &t, &f, FunctionalParams::harmonic(0.0)).unwrap();
        let u = MapState::constant(m.num_vertices(), &[0.0, 0.0, 0.0, 1.0]);
        let r = descend(&pb, &u, &DescentOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn perturbed_identity_relaxes_to_harmonic() {
        let m = DomainMesh::icosphere(3).unwrap();
        let t = TargetManifold::round_sphere(2, 1.0).unwrap();
        let f = TwoFormField::zero(3);
        let pb = Problem::new(&m, &t, &f, FunctionalParams::harmonic(0.0)).unwrap();
        // antipodally odd perturbation: the discrete energy decreases along
        // Möbius dilations, which odd symmetry excludes
        let u0 = MapState::from_fn_projected(&m, &t, |x| {
            vec![x[0] + 0.1 * (3.0 * x[1]).sin(), x[1] + 0.3 * x[2] * x[0] * x[1], x[2]]
        })
        .unwrap();
        let r = descend(&pb, &u0, &DescentOptions { tol_grad: 1e-6, ..Default::default() }).unwrap();
        assert!(r.converged, "{:?} {}", r.termination, r.grad_norm);
        for w in r.trace.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12 * w[0].energy.abs());
        }
        let e = dirichlet(&m, &r.state);
        assert!((e - 4.0 * PI).abs() / (4.0 * PI) < 1e-2, "E = {e}");
        assert!(r.state.is_on(&t));
    }
}
