use std::f64::consts::PI;

use hsphere::diagnose::psi_alpha;
use hsphere::energy::{alpha_energy, dirichlet, omega_term, total_energy};
use hsphere::solve::{alpha_continuation, descend, ContinuationOptions, DescentOptions};
use hsphere::spectrum::{assemble_jacobi, energy_bound_check, morse_index, restrict, SpectrumOptions};
use hsphere::{DomainMesh, FunctionalParams, MapState, Problem, TangentField, TargetManifold, TwoFormField};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn targets() -> Vec<TargetManifold> {
    vec![
        TargetManifold::round_sphere(2, 1.0).unwrap(),
        TargetManifold::round_sphere(3, 1.3).unwrap(),
        TargetManifold::round_sphere(4, 0.8).unwrap(),
        TargetManifold::ellipsoid(&[1.2, 1.0, 0.8]).unwrap(),
        TargetManifold::flat_euclidean(3).unwrap(),
        TargetManifold::flat_torus(&[2.0 * PI, 2.0 * PI, 2.0 * PI]).unwrap(),
    ]
}

fn forms(k: usize) -> Vec<TwoFormField> {
    vec![
        TwoFormField::zero(k),
        TwoFormField::volume(k, 0.9).unwrap(),
        TwoFormField::cosine(k, 0.7, 1.3).unwrap(),
    ]
}

fn random_state(mesh: &DomainMesh, target: &TargetManifold, rng: &mut ChaCha8Rng, amp: f64) -> MapState {
    let mut data = MapState::identity(mesh, target).unwrap().into_vec();
    for x in data.iter_mut() {
        *x += amp * (rng.gen::<f64>() - 0.5);
    }
    let mut u = MapState::new(target.ambient_dim(), data).unwrap();
    u.project_onto(target).unwrap();
    u
}

fn random_tangent(target: &TargetManifold, u: &MapState, rng: &mut ChaCha8Rng) -> TangentField {
    let data = (0..u.as_slice().len()).map(|_| rng.gen::<f64>() - 0.5).collect();
    TangentField::projected(target, u, data)
}

fn random_on(target: &TargetManifold, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let y: Vec<f64> = (0..target.ambient_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = y.iter().map(|x| x * x).sum::<f64>().sqrt().max(0.1);
    let y: Vec<f64> = y.iter().map(|x| x / n).collect();
    target.project_point(&y).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn h_tensor_is_totally_antisymmetric(seed in any::<u64>(), k in 3usize..6, which in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let form = match which {
            0 => TwoFormField::volume(k, rng.gen_range(-2.0..2.0)).unwrap(),
            1 => TwoFormField::cosine(k, rng.gen_range(0.1..2.0), rng.gen_range(0.1..3.0)).unwrap(),
            2 => TwoFormField::cmc(rng.gen_range(0.1..2.0)).unwrap(),
            _ => TwoFormField::custom("quadratic", k, move |y, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..k {
                    for j in (i + 1)..k {
                        let v = y[i] * y[j] + 0.3 * y[(i + j) % k].powi(2);
                        out[i * k + j] = v;
                        out[j * k + i] = -v;
                    }
                }
            }),
        };
        let k = form.ambient_dim();
        let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = form.h_tensor(&y);
        let at = |a: usize, b: usize, c: usize| h[a * k * k + b * k + c];
        let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let tol = if which == 3 { 1e-8 } else { 1e-12 } * scale;
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let v = at(a, b, c);
                    prop_assert!((v + at(a, c, b)).abs() <= tol);
                    prop_assert!((v + at(b, a, c)).abs() <= tol);
                    prop_assert!((v + at(c, b, a)).abs() <= tol);
                }
            }
        }
    }

    #[test]
    fn projections_are_idempotent(seed in any::<u64>(), t in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = &targets()[t];
        let k = target.ambient_dim();
        let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Ok(p) = target.project_point(&y) {
            let pp = target.project_point(&p).unwrap();
            let d: Vec<f64> = p.iter().zip(&pp).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&d) <= 1e-12 * norm(&p).max(1.0));
        }
        let y = random_on(target, &mut rng);
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let pv = target.tangent_project(&y, &v).unwrap();
        let ppv = target.tangent_project(&y, &pv).unwrap();
        let d: Vec<f64> = pv.iter().zip(&ppv).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= 1e-12 * norm(&v));
    }

    #[test]
    fn sphere_curvature_matches_constant_curvature(seed in any::<u64>(), n in 2usize..5, r in 0.3f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = TargetManifold::round_sphere(n, r).unwrap();
        let y = random_on(&target, &mut rng);
        let k = target.ambient_dim();
        let a: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = target.tangent_project(&y, &a).unwrap();
        let z = target.tangent_project(&y, &b).unwrap();
        let xz: f64 = x.iter().zip(&z).map(|(p, q)| p * q).sum();
        let ric = target.ricci(&y, &x, &z).unwrap();
        let expected = (n as f64 - 1.0) / (r * r) * xz;
        prop_assert!((ric - expected).abs() <= 1e-8 * (norm(&x) * norm(&z) / (r * r)).max(1e-12));
        // sectional curvature 1/r² on the plane spanned by x and z
        let sec = target.curvature(&y, &x, &z, &x, &z).unwrap();
        let area2 = norm(&x).powi(2) * norm(&z).powi(2) - xz * xz;
        prop_assert!((sec - area2 / (r * r)).abs() <= 1e-8 * (norm(&x) * norm(&z)).powi(2) / (r * r));
    }

    #[test]
    fn psi_is_strictly_increasing(alpha in 1.0f64..1.5, r1 in 0.0f64..100.0, dr in 1e-3f64..50.0) {
        let r2 = r1 + dr;
        prop_assert!(psi_alpha(alpha, r2) > psi_alpha(alpha, r1));
        prop_assert!(psi_alpha(alpha, 0.0) == 0.0);
    }

    #[test]
    fn energy_bound_check_is_index_gated(e in 0.0f64..100.0, c0 in 0.0f64..2000.0, idx in 0usize..4) {
        let r = energy_bound_check(e, idx, c0);
        if idx <= 1 {
            prop_assert_eq!(r, Some(e <= c0 / (8.0 * PI)));
        } else {
            prop_assert_eq!(r, None);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), t in 0usize..6, f in 0usize..3, alpha in 1.0f64..1.5) {
        let mesh = DomainMesh::icosphere(1).unwrap();
        let target = &targets()[t];
        let form = &forms(target.ambient_dim())[f];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FunctionalParams::new(alpha, rng.gen_range(0.0..1.5), rng.gen_range(0.3..1.0)).unwrap();
        let pb = Problem::new(&mesh, target, form, p).unwrap();
        let u = random_state(&mesh, target, &mut rng, 0.3);
        let v = random_tangent(target, &u, &mut rng);
        let g = pb.gradient(&u);
        let h = 1e-5;
        let fd = (pb.energy(&u.retract(target, &v, h).unwrap()) - pb.energy(&u.retract(target, &v, -h).unwrap())) / (2.0 * h);
        let an = g.mass_dot(&mesh, &v);
        let scale = pb.grad_norm(&g) * v.mass_norm(&mesh);
        prop_assert!((fd - an).abs() <= 1e-6 * scale.max(1e-9), "fd {} an {} scale {}", fd, an, scale);
    }

    #[test]
    fn hessian_is_symmetric(seed in any::<u64>(), t in 0usize..6, f in 0usize..3, alpha in 1.0f64..1.5) {
        let mesh = DomainMesh::icosphere(1).unwrap();
        let target = &targets()[t];
        let form = &forms(target.ambient_dim())[f];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FunctionalParams::new(alpha, rng.gen_range(0.0..1.5), 1.0).unwrap();
        let pb = Problem::new(&mesh, target, form, p).unwrap();
        let u = random_state(&mesh, target, &mut rng, 0.3);
        let v = random_tangent(target, &u, &mut rng);
        let w = random_tangent(target, &u, &mut rng);
        let a = pb.hessian_apply(&u, &v).mass_dot(&mesh, &w);
        let b = pb.hessian_apply(&u, &w).mass_dot(&mesh, &v);
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-12));
    }

    #[test]
    fn lambda_comparison_identity_holds_pointwise(seed in any::<u64>(), alpha in 1.0f64..1.5, l1 in 0.1f64..3.0, dl in 0.1f64..3.0) {
        let mesh = DomainMesh::icosphere(2).unwrap();
        let target = TargetManifold::round_sphere(3, 1.0).unwrap();
        let form = TwoFormField::cosine(4, 0.8, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_state(&mesh, &target, &mut rng, 0.5);
        let l2 = l1 + dl;
        let p = FunctionalParams::new(alpha, l1, 0.7).unwrap();
        let e1 = total_energy(&mesh, &u, &form, &p);
        let e2 = total_energy(&mesh, &u, &form, &p.with_lambda(l2));
        let ea = alpha_energy(&mesh, &u, &p);
        let lhs = e1 / l1 - e2 / l2;
        let rhs = (l2 - l1) / (l1 * l2) * ea;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (e1 / l1).abs().max(rhs.abs()));
    }

    #[test]
    fn alpha_energy_bounded_below_by_area(seed in any::<u64>(), alpha in 1.0f64..1.5, tau in 0.1f64..1.0) {
        let mesh = DomainMesh::icosphere(2).unwrap();
        let target = TargetManifold::round_sphere(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FunctionalParams::new(alpha, 0.0, tau).unwrap();
        let floor = 0.5 * tau.powf(alpha) * mesh.total_area();
        let u = random_state(&mesh, &target, &mut rng, 0.5);
        prop_assert!(alpha_energy(&mesh, &u, &p) > floor);
        let c = MapState::constant(mesh.num_vertices(), &random_on(&target, &mut rng));
        prop_assert!((alpha_energy(&mesh, &c, &p) - floor).abs() <= 1e-13 * floor);
    }

    #[test]
    fn psi_converges_uniformly_as_alpha_decreases(r0 in 0.0f64..1.0) {
        let grid: Vec<f64> = (0..=200).map(|i| r0 + i as f64 * 0.5).filter(|r| *r <= 100.0).collect();
        // ∂Ψ/∂α at α = 1 is r·log(1+r) − log²(1+r)/2
        let slope = grid.iter().map(|&r| r * r.ln_1p() - 0.5 * r.ln_1p().powi(2)).fold(0.0, f64::max);
        for j in 6..=16 {
            let eps = 0.5f64.powi(j);
            let err = grid.iter().map(|&r| (psi_alpha(1.0 + eps, r) - psi_alpha(1.0, r)).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 2.0 * slope * eps, "eps {} err {}", eps, err);
        }
        prop_assert!((psi_alpha(1.0 + 1e-9, 50.0) - psi_alpha(1.0, 50.0)).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn descent_decreases_energy_and_stays_on_target(seed in any::<u64>(), t in 0usize..4, f in 0usize..3) {
        let mesh = DomainMesh::icosphere(2).unwrap();
        let target = &targets()[t];
        let form = &forms(target.ambient_dim())[f];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FunctionalParams::new(1.2, 0.3, 1.0).unwrap();
        let pb = Problem::new(&mesh, target, form, p).unwrap();
        let u = random_state(&mesh, target, &mut rng, 0.4);
        let opts = DescentOptions { max_iters: 60, ..DescentOptions::default() };
        let r = descend(&pb, &u, &opts).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1].energy < w[0].energy + 1e-13 * w[0].energy.abs(), "{:?}", w);
        }
        prop_assert!(r.energy <= pb.energy(&u));
        prop_assert!(r.state.is_on(target));
    }

    #[test]
    fn jacobi_is_symmetric_and_subspace_index_is_bounded(seed in any::<u64>(), t in 0usize..3, m in 5usize..40) {
        let mesh = DomainMesh::icosphere(1).unwrap();
        prop_assert!(mesh.vertex_area().iter().all(|a| *a > 0.0));
        let target = &targets()[t];
        let form = &forms(target.ambient_dim())[2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pb = Problem::new(&mesh, target, form, FunctionalParams::new(1.1, 0.8, 1.0).unwrap()).unwrap();
        let u = random_state(&mesh, target, &mut rng, 0.6);
        let j = assemble_jacobi(&pb, &u).unwrap();
        let a = j.matrix.to_dense();
        let asym = (&a - a.transpose()).abs().max();
        prop_assert!(asym <= 1e-12 * a.abs().max());
        let full = morse_index(&pb, &u, &SpectrumOptions::default()).unwrap();
        let n = j.unknowns();
        let q = DMatrix::from_fn(n, m.min(n), |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let sub = SymmetricEigen::new(restrict(&j.matrix, &q));
        let neg = sub.eigenvalues.iter().filter(|e| **e < -full.tol_eig).count();
        prop_assert!(neg <= full.morse_index, "{} > {}", neg, full.morse_index);
    }

    #[test]
    fn blow_up_spectra_are_at_least_one(k in 0.03f64..0.3, alpha in 1.01f64..1.5) {
        let mesh = DomainMesh::icosphere(3).unwrap();
        let target = TargetManifold::round_sphere(2, 1.0).unwrap();
        let u = dilation(&mesh, &target, k);
        let form = TwoFormField::zero(3);
        let pb = Problem::new(&mesh, &target, &form, FunctionalParams::new(alpha, 0.0, 1.0).unwrap()).unwrap();
        // zero iterations: the bookkeeping runs on the given state
        let opts = ContinuationOptions {
            descent: DescentOptions { max_iters: 0, ..DescentOptions::default() },
            conc_factor: 5.0,
            bubble_subdivisions: 3,
            ..ContinuationOptions::default()
        };
        let r = alpha_continuation(&pb, &u, &[alpha], &opts).unwrap();
        for b in r.bubbles() {
            prop_assert!(b.mu >= 1.0 && b.nu >= 1.0);
            prop_assert!(b.neck_length >= 0.0);
            if b.nu == 1.0 {
                prop_assert_eq!(b.neck_length, 0.0);
            }
        }
    }
}

/// Degree-one conformal map concentrating at the north pole with scale `k`.
fn dilation(mesh: &DomainMesh, target: &TargetManifold, k: f64) -> MapState {
    MapState::from_fn_projected(mesh, target, |x| {
        let r = x[2].clamp(-1.0, 1.0).acos();
        let rp = 2.0 * ((0.5 * r).tan() / k).atan();
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if rho < 1e-14 {
            return vec![0.0, 0.0, if r < 1.0 { 1.0 } else { -1.0 }];
        }
        vec![rp.sin() * x[0] / rho, rp.sin() * x[1] / rho, rp.cos()]
    })
    .unwrap()
}

#[test]
fn identity_dirichlet_energy_converges_quadratically() {
    let target = TargetManifold::round_sphere(2, 1.0).unwrap();
    for s in 1..=5 {
        let m = DomainMesh::icosphere(s).unwrap();
        let err = (dirichlet(&m, &MapState::identity(&m, &target).unwrap()) - 4.0 * PI).abs();
        assert!(err <= 4.0 * PI * m.mesh_size().powi(2), "s = {s}: {err}");
    }
}

#[test]
fn meshes_are_closed_and_oriented() {
    for s in 0..=6 {
        assert!(DomainMesh::icosphere(s).unwrap().is_closed_oriented());
    }
}

#[test]
fn conformal_reparametrization_changes_energies_by_vanishing_amounts() {
    let sphere = TargetManifold::round_sphere(2, 1.0).unwrap();
    let flat = TargetManifold::flat_euclidean(3).unwrap();
    let vol = TwoFormField::volume(3, 1.0).unwrap();
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for s in 2..=5 {
        let m = DomainMesh::icosphere(s).unwrap();
        let u = dilation(&m, &sphere, 0.6);
        let id = MapState::identity(&m, &sphere).unwrap();
        let de = (dirichlet(&m, &u) - dirichlet(&m, &id)).abs();
        let uf = MapState::new(3, u.as_slice().to_vec()).unwrap();
        let idf = MapState::identity(&m, &flat).unwrap();
        let dw = (omega_term(&m, &uf, &vol) - omega_term(&m, &idf, &vol)).abs();
        assert!(de < prev.0 && dw < prev.1, "s = {s}: {de} {dw} vs {prev:?}");
        prev = (de, dw);
    }
    assert!(prev.0 < 0.02 * 4.0 * PI && prev.1 < 0.02 * 4.0 * PI / 3.0, "{prev:?}");
}
