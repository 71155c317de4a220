use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use qcurv_core::assembler::AxialKernel;
use qcurv_core::delaunay::solve_periodic;
use qcurv_core::interactions::psi;
use qcurv_core::kernels::{riesz_kernel_cyl, CylKernelTable, KernelKind};
use qcurv_core::toda::{TodaOperator, WeightedSeq};
use qcurv_core::derive_params;

fn kernels(c: &mut Criterion) {
    let p = derive_params(5, 1.5).unwrap();
    let mut g = c.benchmark_group("kernel");
    for t in [0.5, 4.0, 12.0] {
        g.bench_with_input(BenchmarkId::new("riesz_cyl", t), &t, |b, &t| {
            b.iter(|| riesz_kernel_cyl(black_box(t), &p, 1e-10).unwrap())
        });
    }
    let table = CylKernelTable::build(&p, KernelKind::Riesz, 0.0, 20.0, 0.01, 1e-10).unwrap();
    g.bench_function("table_eval", |b| b.iter(|| table.eval(black_box(3.217))));
    let axial = AxialKernel::build(&p, 1e-10).unwrap();
    g.bench_function("axial_eval", |b| b.iter(|| axial.eval(black_box(0.3), black_box(0.7), black_box(0.65))));
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let p = derive_params(5, 1.5).unwrap();
    let mut g = c.benchmark_group("solver");
    g.sample_size(10);
    g.bench_function("psi_ell_6", |b| b.iter(|| psi(black_box(6.0), &p, 1e-10).unwrap()));
    g.bench_function("delaunay_m300", |b| b.iter(|| solve_periodic(black_box(3.0), &p, 300, 1e-10).unwrap()));
    let op = TodaOperator::dilation(200);
    let rhs = WeightedSeq::scalar((0..200).map(|j| (j as f64).sin()).collect(), 0.3);
    g.bench_function("toda_invert_200", |b| b.iter(|| op.invert(black_box(&rhs), 0.3).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels, solvers);
criterion_main!(benches);
