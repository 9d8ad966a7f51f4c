use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hsphere::solve::{descend, DescentOptions};
use hsphere::spectrum::{morse_index, SpectrumOptions};
use hsphere::{DomainMesh, FunctionalParams, MapState, Problem, TangentField, TargetManifold, TwoFormField};
use std::hint::black_box;

fn perturbed(mesh: &DomainMesh, target: &TargetManifold) -> MapState {
    MapState::from_fn_projected(mesh, target, |[x, y, z]| vec![x + 0.1 * y * z, y + 0.1 * x, z, 0.05 * x * y * z]).unwrap()
}

fn kernels(c: &mut Criterion) {
    let target = TargetManifold::round_sphere(3, 1.0).unwrap();
    let form = TwoFormField::volume(4, 1.0).unwrap();
    let params = FunctionalParams::new(1.1, 0.5, 1.0).unwrap();
    let mut group = c.benchmark_group("functional");
    for s in [3u32, 4, 5] {
        let mesh = DomainMesh::icosphere(s).unwrap();
        let pb = Problem::new(&mesh, &target, &form, params).unwrap();
        let u = perturbed(&mesh, &target);
        let v: TangentField = pb.gradient(&u);
        group.bench_with_input(BenchmarkId::new("energy", s), &u, |b, u| b.iter(|| pb.energy(black_box(u))));
        group.bench_with_input(BenchmarkId::new("gradient", s), &u, |b, u| b.iter(|| pb.gradient(black_box(u))));
        group.bench_with_input(BenchmarkId::new("hessian_apply", s), &u, |b, u| {
            b.iter(|| pb.hessian_apply(black_box(u), black_box(&v)))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("solvers");
    group.sample_size(10);
    let mesh = DomainMesh::icosphere(3).unwrap();
    let zero = TwoFormField::zero(4);
    let pb = Problem::new(&mesh, &target, &zero, FunctionalParams::new(1.0625, 0.0, 1.0).unwrap()).unwrap();
    let u = perturbed(&mesh, &target);
    group.bench_function("descent_s3", |b| b.iter(|| descend(&pb, black_box(&u), &DescentOptions::default()).unwrap()));
    let crit = descend(&pb, &u, &DescentOptions::default()).unwrap().state;
    group.bench_function("morse_index_s3", |b| {
        b.iter(|| morse_index(&pb, black_box(&crit), &SpectrumOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
