//! Fixtures shared by the kernel benchmarks.

use chaintube::geometry::HPolytope;
use chaintube::model::{build_truck_chain, CoupledSystem, TruckChainParams};
use chaintube::numkernel::QpProblem;
use chaintube::synthesis::SynthesisOptions;
use nalgebra::{DMatrix, DVector};

/// Regular `k`-gon of circumradius `r`, rotated by `phase`.
pub fn polygon(k: usize, r: f64, phase: f64) -> HPolytope {
    let pts: Vec<_> = (0..k)
        .map(|j| {
            let t = phase + std::f64::consts::TAU * j as f64 / k as f64;
            DVector::from_vec(vec![r * t.cos(), r * t.sin()])
        })
        .collect();
    HPolytope::from_points(&pts).unwrap()
}

/// The four-truck chain with springs and dampers scaled by 0.03.
pub fn demo_system() -> CoupledSystem {
    let d = TruckChainParams::default();
    let p = TruckChainParams {
        springs: d.springs.iter().map(|k| k * 0.03).collect(),
        dampers: d.dampers.iter().map(|c| c * 0.03).collect(),
        ..d
    };
    build_truck_chain(&p).unwrap()
}

pub fn demo_options(sys: &CoupledSystem) -> SynthesisOptions {
    let mut opts = SynthesisOptions::for_system(sys);
    opts.inner_scale = 0.25;
    opts.eps = 1e-3;
    opts
}

/// Box-constrained QP of size `n` with a dense Hessian and one coupling
/// row, shaped like a condensed horizon problem.
pub fn horizon_qp(n: usize) -> QpProblem {
    let h = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + 0.1 * i as f64 } else { 0.9f64.powi(i.abs_diff(j) as i32) * 0.5 });
    let f = DVector::from_fn(n, |i, _| if i % 2 == 0 { -3.0 } else { 2.5 });
    let mut a = DMatrix::zeros(2 * n + 1, n);
    let mut b = DVector::from_element(2 * n + 1, 1.0);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        a[(2 * i + 1, i)] = -1.0;
        a[(2 * n, i)] = 1.0;
    }
    b[2 * n] = 0.5;
    QpProblem::inequality(h, f, a, b).unwrap()
}
