use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fracvi_core::assembly::assemble_stiffness;
use fracvi_core::condense::TraceSchur;
use fracvi_core::extension::make_mollifier;
use fracvi_core::fracparams::FracParams;
use fracvi_core::mesh::{base_mesh, graded_partition, tensor_mesh, TensorMesh};
use fracvi_core::oracle::{fractional_stiffness, spectral_vi_solve, OracleConfig};
use fracvi_core::study::Preset;
use fracvi_core::timestepper::{discrete_obstacle, init_state, step, StepOperator};

fn mesh(n: usize, params: &FracParams) -> TensorMesh {
    tensor_mesh(
        base_mesh(n, 1.0).unwrap(),
        graded_partition(3.0, n, 1.1 * params.gamma_min, params).unwrap(),
    )
}

fn assembly(c: &mut Criterion) {
    let params = FracParams::new(0.5).unwrap();
    let mut g = c.benchmark_group("assemble_stiffness");
    for n in [32, 64, 128] {
        let m = mesh(n, &params);
        g.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| assemble_stiffness(black_box(m), &params).unwrap())
        });
    }
    g.finish();
}

fn schur(c: &mut Criterion) {
    let params = FracParams::new(0.5).unwrap();
    let mut g = c.benchmark_group("trace_schur");
    g.sample_size(10);
    for n in [32, 64] {
        let m = mesh(n, &params);
        let a = assemble_stiffness(&m, &params).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| TraceSchur::new(black_box(a), m.n_trace()).unwrap())
        });
    }
    g.finish();
}

fn pdas_step(c: &mut Criterion) {
    let params = FracParams::new(0.5).unwrap();
    let problem = Preset::P2.problem(0.5, 0.5);
    let mut g = c.benchmark_group("pdas_step");
    for n in [32, 64] {
        let m = mesh(n, &params);
        let moll = make_mollifier(&m.base, &m.partition);
        let op = StepOperator::new(&m, &params, 0.5 / n as f64).unwrap();
        let obstacle = discrete_obstacle(&problem, &m.base, &moll);
        let v0 = init_state(&problem, &m, &moll, &params).unwrap();
        let prev = m.trace_of(&v0).to_vec();
        let load = vec![0.0; m.n_trace()];
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| step(&op, black_box(&prev), &load, &obstacle, &[], 1e-12).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    g.bench_function("fractional_stiffness/128", |b| {
        b.iter(|| fractional_stiffness(black_box(128), 512, 0.5, 1.0).unwrap())
    });
    let problem = Preset::P2.problem(0.5, 0.5 / 64.0);
    let config = OracleConfig {
        n_modes: 128,
        n_phys: 512,
        tau_ref: Some(0.5 / 4096.0),
        ..OracleConfig::default()
    };
    // 128 reference steps
    g.bench_function("solve_128_steps/128", |b| b.iter(|| spectral_vi_solve(black_box(&problem), &config).unwrap()));
    g.finish();
}

criterion_group!(benches, assembly, schur, pdas_step, oracle);
criterion_main!(benches);
