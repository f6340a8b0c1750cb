use std::hint::black_box;

use cardiac_core::fem::{assemble_mass, assemble_stiffness, gmres_solve, GmresConfig, MeshPattern, SparseMatrix};
use cardiac_core::geometry::build_slab_mesh;
use cardiac_core::solver::{tissue_tensors, Simulator, TissueState};
use cardiac_core::{Conductivities, FiberField, Mesh, SolverParams, StimulusPlan, StimulusSite, Vec3};
use criterion::{criterion_group, criterion_main, Criterion};

fn slab() -> (Mesh, FiberField) {
    let mesh = build_slab_mesh([0.5, 0.5, 0.2], 0.025).unwrap();
    let fibers = FiberField::uniform(mesh.node_count(), Vec3::x(), Vec3::z()).unwrap();
    (mesh, fibers)
}

fn assembly(c: &mut Criterion) {
    let (mesh, fibers) = slab();
    let tensors = tissue_tensors(&mesh, Some(&fibers), Conductivities::new(1.23, 0.25, 0.07)).unwrap();
    c.bench_function("stiffness assembly", |b| b.iter(|| assemble_stiffness(black_box(&mesh), &tensors).unwrap()));
    let pattern = MeshPattern::new(&mesh);
    c.bench_function("stiffness values on a fixed pattern", |b| {
        b.iter(|| pattern.stiffness_values(black_box(&mesh), &tensors, 1).unwrap())
    });
}

fn step_matrix(mesh: &Mesh, fibers: &FiberField) -> SparseMatrix {
    let tensors = tissue_tensors(mesh, Some(fibers), Conductivities::new(1.23, 0.25, 0.07)).unwrap();
    let m = assemble_mass(mesh, true).unwrap();
    let k = assemble_stiffness(mesh, &tensors).unwrap();
    let mut trip = Vec::new();
    for i in 0..m.dim() {
        trip.push((i, i, m.get(i, i) / 0.025));
        trip.extend(k.row(i).map(|(j, v)| (i, j, v / 1000.0)));
    }
    SparseMatrix::from_triplets(m.dim(), &trip).unwrap()
}

fn gmres(c: &mut Criterion) {
    let (mesh, fibers) = slab();
    let a = step_matrix(&mesh, &fibers);
    let b: Vec<f64> = (0..a.dim()).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    c.bench_function("jacobi gmres on a step matrix", |bch| {
        bch.iter(|| gmres_solve(black_box(&a), &b, &GmresConfig::default()).unwrap())
    });
    let x = b.clone();
    let mut y = vec![0.0; a.dim()];
    c.bench_function("sparse matvec", |bch| bch.iter(|| a.mul_vec_into(black_box(&x), &mut y)));
}

fn step(c: &mut Criterion) {
    let (mesh, fibers) = slab();
    let params = SolverParams {
        sigma: Conductivities::new(1.23, 0.25, 0.07),
        t_end: 1000.0,
        ..SolverParams::default()
    };
    let plan = StimulusPlan::new(vec![StimulusSite {
        location: [0.0, 0.0, 0.0],
        onset: 0.0,
    }]);
    let tensors = tissue_tensors(&mesh, Some(&fibers), params.sigma).unwrap();
    let mut sim = Simulator::new(&mesh, &tensors, &params, &plan).unwrap();
    let mut state = TissueState::rest(mesh.node_count());
    // Move the front into the tissue before timing.
    for n in 0..400 {
        sim.step(&mut state, n).unwrap();
    }
    let mut n = 400;
    c.bench_function("time step with an active front", |b| {
        b.iter(|| {
            sim.step(&mut state, n).unwrap();
            n += 1;
        })
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = assembly, gmres, step
}
criterion_main!(kernels);
