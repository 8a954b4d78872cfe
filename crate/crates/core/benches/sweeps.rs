//! Data-parallel against serial sweeps over independent RG evaluations.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use srg_core::exec;
use srg_core::fockgrid::{build_fock, build_grid};
use srg_core::linalg::{c, re};
use srg_core::model::ModelSpec;
use srg_core::rgloop::{Pipeline, RGConfig};
use srg_core::verify::LineModel;

fn level_function_sweep(cr: &mut Criterion) {
    let basis = build_fock(&build_grid(0.25, 6, 2).unwrap(), 2).unwrap();
    let spec = ModelSpec::spin_boson(0.02, 0.1);
    let p = Pipeline::new(&spec, re(0.1), &basis, RGConfig::new(0.25, 4)).unwrap();
    let e = p.e_at();
    let zs: Vec<_> = (0..16).map(|k| e + c(0.002 * (k as f64 - 8.0), 0.001)).collect();
    let mut group = cr.benchmark_group("level_function");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", zs.len()), &zs, |b, zs| {
        b.iter(|| exec::map(zs, |&z| p.level_function(3, z).unwrap()))
    });
    group.bench_with_input(BenchmarkId::new("serial", zs.len()), &zs, |b, zs| {
        b.iter(|| exec::map_serial(zs, |&z| p.level_function(3, z).unwrap()))
    });
    group.finish();
}

fn counterexample_sweep(cr: &mut Criterion) {
    let line = LineModel::default();
    let ss: Vec<f64> = (0..32).map(|k| -0.5 + k as f64 / 31.0).collect();
    let mut group = cr.benchmark_group("counterexample");
    group.bench_with_input(BenchmarkId::new("parallel", ss.len()), &ss, |b, ss| {
        b.iter(|| exec::map(ss, |&s| line.ground(s).0))
    });
    group.bench_with_input(BenchmarkId::new("serial", ss.len()), &ss, |b, ss| {
        b.iter(|| exec::map_serial(ss, |&s| line.ground(s).0))
    });
    group.finish();
}

criterion_group!(benches, level_function_sweep, counterexample_sweep);
criterion_main!(benches);
