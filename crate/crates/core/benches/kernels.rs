use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pendrift::barriers::{build_f_1d, build_u_eps_1d, verify_supersolution_1d, BoundaryTrace, ResidualGrid, Side};
use pendrift::coefficients::ConstantField;
use pendrift::exec::Exec;
use pendrift::geometry::{DomainSpec, Potential, Shape};
use pendrift::grid::GridSpec;
use pendrift::linalg::bicgstab;
use pendrift::penalized::{assemble_flux_operator, scalar_fn, FaceScheme, FluxOperator, PenalizedProblem};
use pendrift::reference::heat_exact;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn disk_stencil(panels: usize) -> pendrift::linalg::Stencil9 {
    let domain = DomainSpec::with_margin(Shape::Disk { radius: 1.0 }, 0.5).unwrap();
    let grid = GridSpec::new(domain.bounding_box, 2, panels, 100, 0.1).unwrap();
    let mut p = PenalizedProblem::new(
        domain,
        Arc::new(ConstantField::identity()),
        1e4,
        scalar_fn(|x| 1.0 + 0.5 * (std::f64::consts::PI * x.norm()).cos()),
        grid,
    );
    p.options.face = FaceScheme::Fitted;
    match assemble_flux_operator(&p, 0.0).unwrap() {
        FluxOperator::TwoD { matrix, .. } => matrix.shifted_identity(-0.5 * grid.dt()),
        _ => unreachable!(),
    }
}

fn stencil_kernels(c: &mut Criterion) {
    let m = disk_stencil(256);
    let x: Vec<f64> = (0..m.len()).map(|k| 1.0 + (k as f64 * 1e-3).sin()).collect();
    let mut b = vec![0.0; m.len()];
    m.apply(Exec::Sequential, &x, &mut b);

    let mut group = c.benchmark_group("stencil9_apply_256");
    for (name, exec) in MODES {
        let mut y = vec![0.0; m.len()];
        group.bench_function(BenchmarkId::from_parameter(name), |bch| bch.iter(|| m.apply(exec, &x, &mut y)));
    }
    group.finish();

    let mut group = c.benchmark_group("bicgstab_256");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| {
                let mut sol = vec![1.0; m.len()];
                bicgstab(exec, &m, &b, &mut sol, 1e-10, 2000).unwrap()
            })
        });
    }
    group.finish();
}

fn barrier_sweep(c: &mut Criterion) {
    let trace = BoundaryTrace::from_fn(|t| heat_exact(1.0, t), 0.3, 300).unwrap();
    let ue = build_u_eps_1d(Arc::new(heat_exact), &trace, 0.05, 0.0, 1.0).unwrap();
    let f = build_f_1d(&ue, &trace, Side::Right).unwrap();
    let potential = Potential::cubic(Shape::Interval { a: 0.0, b: 1.0 });
    let grid = ResidualGrid::new(0.5, 0.3);
    let mut group = c.benchmark_group("barrier_residual");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| verify_supersolution_1d(&f, &potential, 8e4, grid, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, stencil_kernels, barrier_sweep);
criterion_main!(benches);
