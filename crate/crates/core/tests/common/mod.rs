#![allow(dead_code)]

use std::sync::OnceLock;

use chaintube::geometry::HPolytope;
use chaintube::model::{build_truck_chain, decompose, CoupledSystem, TruckChainParams};
use chaintube::synthesis::{synthesize, SynthesisOptions, TubeDesign};
use nalgebra::{dmatrix, DVector};

pub const BENCH_X0: [f64; 8] = [1.8, -2.0, 0.5, 7.1, -0.9, -7.0, -1.8, 2.0];

/// The benchmark chain with springs and dampers scaled by 0.03.
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

pub fn demo() -> &'static (CoupledSystem, TubeDesign) {
    static DEMO: OnceLock<(CoupledSystem, TubeDesign)> = OnceLock::new();
    DEMO.get_or_init(|| {
        let sys = demo_system();
        let design = synthesize(&sys, &demo_options(&sys)).unwrap();
        (sys, design)
    })
}

pub fn demo_x0() -> DVector<f64> {
    DVector::from_row_slice(&BENCH_X0) * 0.05
}

/// Two trucks without springs or dampers.
pub fn decoupled_system() -> CoupledSystem {
    let p = TruckChainParams {
        masses: vec![3.0, 2.0],
        springs: vec![0.0],
        dampers: vec![0.0],
        ..TruckChainParams::default()
    };
    build_truck_chain(&p).unwrap()
}

pub fn decoupled() -> &'static (CoupledSystem, TubeDesign) {
    static DECOUPLED: OnceLock<(CoupledSystem, TubeDesign)> = OnceLock::new();
    DECOUPLED.get_or_init(|| {
        let sys = decoupled_system();
        let design = synthesize(&sys, &SynthesisOptions::for_system(&sys)).unwrap();
        (sys, design)
    })
}

/// `x1⁺ = x1 + u1 + 0.1 x2`, `x2⁺ = 0.5 x2 + u2`, all bounds 1.
pub fn scalar_pair() -> CoupledSystem {
    let a = dmatrix![1.0, 0.1; 0.0, 0.5];
    let b = dmatrix![1.0, 0.0; 0.0, 1.0];
    let unit = || HPolytope::from_bounds(&[-1.0], &[1.0]).unwrap();
    decompose(&a, &b, &[1, 1], &[1, 1], vec![(unit(), unit()), (unit(), unit())], None).unwrap()
}
