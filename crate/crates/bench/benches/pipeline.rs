//! End-to-end performance benches for the stabilization pipeline:
//! basis construction, gain design, delay convolution, one Crank-Nicolson
//! step, a short closed-loop run, and the lifting boundary-value solve.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use nstab_core::delay::apply_t_tau;
use nstab_core::design::{build_design, solve_lifting_bvp};
use nstab_core::pdesim::{run_closed_loop, HeatSolver};
use nstab_core::spectral::{eigenvalues, BasisPair, DEFAULT_QUAD_NODES};
use nstab_core::{ControlHistory, DelayOperator, Grid, SimConfig};

const C: f64 = 2.0;
const ALPHA: f64 = 1.0;
const RHO: f64 = 5.0;

fn basis(pairs: usize) -> BasisPair {
    let spectrum = eigenvalues(pairs, C, ALPHA).expect("roots solvable");
    BasisPair::build(spectrum, DEFAULT_QUAD_NODES).expect("basis builds")
}

fn bench_spectral_build(c: &mut Criterion) {
    c.bench_function("spectral_build_8_modes", |b| {
        b.iter(|| std::hint::black_box(basis(4)))
    });
}

fn bench_design_build(c: &mut Criterion) {
    let bp = basis(2);
    c.bench_function("design_build", |b| {
        b.iter(|| std::hint::black_box(build_design(&bp, RHO, None).expect("design builds")))
    });
}

fn bench_apply_t(c: &mut Criterion) {
    let bp = basis(2);
    let ds = build_design(&bp, RHO, None).expect("design builds");
    let op = DelayOperator::new(ds.lambda.clone(), ds.c_mat.clone(), 0.2);
    let mut hist = ControlHistory::new(0.2, 2);
    let mut t = 0.0;
    while t <= 1.0 + 1e-12 {
        hist.push(t, DVector::from_row_slice(&[(2.0 * t).sin(), (-t).exp()]))
            .expect("monotone pushes");
        t += 0.005;
    }
    c.bench_function("apply_t_full_window", |b| {
        b.iter(|| std::hint::black_box(apply_t_tau(&op, &hist, 0.9)))
    });
}

fn bench_cn_step(c: &mut Criterion) {
    let grid = Grid::new(400).expect("valid grid");
    let mut solver = HeatSolver::new(&grid, C, ALPHA, 1e-3).expect("solver factors");
    let mut y: Vec<f64> = grid.nodes.iter().map(|&x| x.sin()).collect();
    c.bench_function("crank_nicolson_step_m400", |b| {
        b.iter(|| {
            solver.step(&mut y, 0.0);
            std::hint::black_box(y[1])
        })
    });
}

fn bench_closed_loop_short(c: &mut Criterion) {
    let cfg = SimConfig {
        grid_m: 100,
        dt: 1e-3,
        t_final: 0.25,
        ..SimConfig::default()
    };
    c.bench_function("closed_loop_quarter_second_m100", |b| {
        b.iter(|| std::hint::black_box(run_closed_loop(&cfg).expect("run completes")))
    });
}

fn bench_lifting_bvp(c: &mut Criterion) {
    let bp = basis(2);
    c.bench_function("lifting_bvp_m501", |b| {
        b.iter(|| std::hint::black_box(solve_lifting_bvp(&bp, 50.0, 501).expect("bvp solves")))
    });
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(10);
    targets = bench_spectral_build, bench_design_build, bench_apply_t,
              bench_cn_step, bench_closed_loop_short, bench_lifting_bvp
}
criterion_main!(pipeline);
