mod common;

use chaintube::geometry::{is_subset, linear_map, rpi_outer_approx, rpi_template_approx, support, HPolytope, RPI_ITERATION_CAP};
use chaintube::model::build_four_trucks;
use chaintube::synthesis::{synthesize, validate, SynthesisOptions, TubeDesign};
use common::*;
use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;

fn unit(k: usize) -> DVector<f64> {
    let mut d = DVector::zeros(2);
    d[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
    d
}

#[test]
fn demo_design_passes_validation() {
    let (sys, design) = demo();
    let report = validate(sys, design).unwrap();
    let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    assert!(report.all_passed(), "failed checks: {failed:?}");
    for d in &design.subsystems {
        assert!(d.delta > 0.0);
    }
}

#[test]
fn demo_design_relations() {
    let (_, design) = demo();
    for d in &design.subsystems {
        // S ⊕ H ⊆ Z and the terminal nesting, re-checked through support functions
        for k in 0..4 {
            let dir = unit(k);
            let lhs = support(&d.s, &dir).unwrap() + support(&d.h, &dir).unwrap();
            assert!(lhs <= support(&d.z, &dir).unwrap() + 1e-8);
            let xf = support(&d.xf_hat, &dir).unwrap() + support(&d.h, &dir).unwrap();
            assert!(xf <= support(&d.xf_hathat, &dir).unwrap() + 1e-8);
        }
    }
}

#[test]
fn coupling_set_of_first_truck_dominates_third() {
    let (_, design) = demo();
    let (w1, w3) = (&design.subsystems[0].w, &design.subsystems[2].w);
    for k in 0..16 {
        let ang = k as f64 * std::f64::consts::PI / 8.0;
        let dir = DVector::from_vec(vec![ang.cos(), ang.sin()]);
        assert!(support(w1, &dir).unwrap() > support(w3, &dir).unwrap());
    }
}

#[test]
fn benchmark_synthesis_names_the_failed_check() {
    let sys = build_four_trucks(0.1).unwrap();
    let err = synthesize(&sys, &SynthesisOptions::for_system(&sys)).unwrap_err();
    let check = err.check().expect("failure names a check");
    assert!(!check.is_empty());
}

#[test]
fn decoupled_system_has_tiny_tubes() {
    let (sys, design) = decoupled();
    for (s, d) in sys.subsystems.iter().zip(&design.subsystems) {
        for k in 0..4 {
            let dir = unit(k);
            assert!(support(&d.w, &dir).unwrap().abs() < 1e-12);
            assert!(support(&d.z, &dir).unwrap() < 1e-2);
            let gap = support(&s.x_set, &dir).unwrap() - support(&d.x_hat, &dir).unwrap();
            assert!(gap >= -1e-12 && gap < 1e-2);
        }
    }
    assert!(validate(sys, design).unwrap().all_passed());
}

#[test]
fn scalar_tube_matches_geometric_series() {
    // x⁺ = x + u + w with |w| ≤ 0.1 and Q = R = 1: p² = p + 1, K = −p/(1+p)
    let sys = scalar_pair();
    let mut opts = SynthesisOptions::for_system(&sys);
    opts.eps = 1e-6;
    let design = synthesize(&sys, &opts).unwrap();
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let k = -p / (1.0 + p);
    let d = &design.subsystems[0];
    assert!((d.k_t[(0, 0)] - k).abs() < 1e-9);
    let radius = 0.1 / (1.0 - (1.0 + k));
    for s in [1.0, -1.0] {
        let h = support(&d.z, &DVector::from_vec(vec![s])).unwrap();
        assert!(h >= radius - 1e-9 && h <= radius + 1e-5, "support {h} vs {radius}");
    }
}

#[test]
fn shrunk_tube_fails_nesting_check() {
    let (sys, design) = demo();
    let mut bad: TubeDesign = design.clone();
    bad.subsystems[1].z = bad.subsystems[1].s.scale(0.99).unwrap();
    let report = validate(sys, &bad).unwrap();
    let c = report.find("S_2 ⊕ H_2 ⊆ Z_2").unwrap();
    assert!(!c.passed);
}

#[test]
fn unstable_outer_gain_fails_schur_check() {
    let (sys, design) = demo();
    let mut bad = design.clone();
    bad.subsystems[0].k_hat = dmatrix![10.0, 10.0];
    let report = validate(sys, &bad).unwrap();
    assert!(report.failures().any(|c| c.name.contains("Schur")));
}

#[test]
fn synthesis_is_deterministic() {
    let sys = demo_system();
    let opts = demo_options(&sys);
    let a = synthesize(&sys, &opts).unwrap();
    assert_eq!(a.to_text(), demo().1.to_text());
}

#[test]
fn design_cache_round_trips() {
    let (_, design) = demo();
    let text = design.to_text();
    let back = TubeDesign::from_text(&text).unwrap();
    assert_eq!(back.to_text(), text);
    assert_eq!(&back, design);
}

#[test]
fn larger_coupling_never_shrinks_the_tube() {
    let sys = scalar_pair();
    let opts = SynthesisOptions::for_system(&sys);
    let base = synthesize(&sys, &opts).unwrap();
    let d = &base.subsystems[0];
    let a_cl = &sys.subsystems[0].a + &sys.subsystems[0].b * &d.k_t;
    let z = rpi_outer_approx(&a_cl, &d.w, opts.eps, RPI_ITERATION_CAP).unwrap();
    let z_big = rpi_outer_approx(&a_cl, &d.w.scale(1.1).unwrap(), opts.eps, RPI_ITERATION_CAP).unwrap();
    for s in [1.0, -1.0] {
        let dir = DVector::from_vec(vec![s]);
        assert!(support(&z_big, &dir).unwrap() >= support(&z, &dir).unwrap());
    }
}

fn rpi_defect(a: &DMatrix<f64>, w: &HPolytope, z: &HPolytope) -> f64 {
    let az = linear_map(a, z).unwrap();
    (0..z.num_rows())
        .map(|k| {
            let n = z.a().row(k).transpose();
            support(&az, &n).unwrap() + support(w, &n).unwrap() - z.b()[k]
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn template_tube_is_rpi_and_covers_the_exact_one(
        a11 in -0.6f64..0.6, a12 in -0.5f64..0.5, a21 in -0.5f64..0.5, a22 in -0.6f64..0.6,
        w1 in 0.05f64..1.0, w2 in 0.05f64..1.0, count in 8usize..40,
    ) {
        let a = dmatrix![a11, a12; a21, a22];
        prop_assume!(a.clone().complex_eigenvalues().iter().all(|l| l.norm() < 0.85));
        let w = HPolytope::from_bounds(&[-w1, -w2], &[w1, w2]).unwrap();
        let dirs: Vec<DVector<f64>> = (0..count)
            .map(|k| {
                let ang = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![ang.cos(), ang.sin()])
            })
            .collect();
        let exact = rpi_outer_approx(&a, &w, 1e-3, RPI_ITERATION_CAP).unwrap();
        let tmpl = rpi_template_approx(&a, &w, 1e-3, RPI_ITERATION_CAP, &dirs).unwrap();
        prop_assert!(rpi_defect(&a, &w, &tmpl) <= 1e-8);
        prop_assert!(is_subset(&exact, &tmpl, -1e-8).unwrap());
    }
}
