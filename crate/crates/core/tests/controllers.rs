mod common;

use std::collections::BTreeMap;

use chaintube::controllers::{
    control_action, evaluate_cost, stage_cost, ControlError, Controllers, DisturbancePreview, InitialConstraint, NominalTrajectory,
    AUDIT_TOL,
};
use chaintube::runtime::{run_baseline, ControllerKind, RunOptions};
use common::*;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

const N: usize = 10;

fn local(x: &DVector<f64>, i: usize) -> DVector<f64> {
    x.rows(2 * i, 2).into_owned()
}

fn zero_preview(i: usize, nx: usize) -> DisturbancePreview {
    DisturbancePreview { owner: i, stamp: 0, d_seq: vec![DVector::zeros(nx); N] }
}

/// Infinite-horizon LQR gain by plain Riccati iteration.
fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..20_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).amax() < 1e-14 * (1.0 + p.amax());
        p = next;
        if done {
            break;
        }
    }
    let s = r + b.transpose() * &p * b;
    -(s.try_inverse().unwrap() * b.transpose() * &p * a)
}

#[test]
fn zero_state_gives_zero_trajectories() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    for i in 0..sys.len() {
        let x = DVector::zeros(2);
        let inner = c.solve_inner(i, &x, 0).unwrap();
        assert!(inner.states.iter().chain(&inner.inputs).all(|v| v.amax() == 0.0));
        let outer = c.solve_outer(i, &x, &inner, &zero_preview(i, 2), 0).unwrap();
        assert!(outer.states.iter().chain(&outer.inputs).all(|v| v.amax() == 0.0));
        assert_eq!(c.trajectory_cost(&outer).unwrap(), 0.0);
    }
}

#[test]
fn unconstrained_inner_plan_is_the_lqr_rollout() {
    let (sys, design) = decoupled();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let (s, d) = (&sys.subsystems[0], &design.subsystems[0]);
    let k = lqr_gain(&s.a, &s.b, &d.q, &d.r);
    let x = dvector![0.05, -0.1];
    assert!(d.xf_hat.contains(&x, 0.0));
    let traj = c.solve_inner(0, &x, 0).unwrap();
    assert!((&traj.states[0] - &x).amax() < 1e-2);
    let mut xk = traj.states[0].clone();
    for kk in 0..N {
        let u = &k * &xk;
        assert!((&u - &traj.inputs[kk]).amax() < 1e-6, "step {kk}: {} vs {}", u[0], traj.inputs[kk][0]);
        xk = &s.a * &xk + &s.b * u;
        assert!((&xk - &traj.states[kk + 1]).amax() < 1e-6);
    }
}

#[test]
fn shifted_reference_stays_consistent() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let x0 = demo_x0();
    for i in 0..sys.len() {
        let (s, d) = (&sys.subsystems[i], &design.subsystems[i]);
        let mut traj = c.solve_inner(i, &local(&x0, i), 0).unwrap();
        for step in 1..=50 {
            traj = c.shift_inner(&traj).unwrap();
            assert_eq!(traj.stamp, step);
            assert!(traj.dynamics_residual(&s.a, &s.b, None) < 1e-12);
            assert!(d.xf_hat.contains(traj.states.last().unwrap(), AUDIT_TOL));
        }
    }
}

#[test]
fn shifting_outside_the_terminal_set_is_rejected() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let mut traj = NominalTrajectory::zero(0, 0, 2, 1, N);
    traj.states[N] = dvector![1.9, 0.0];
    assert!(matches!(c.shift_inner(&traj), Err(ControlError::InvariantViolation(_))));
}

#[test]
fn preview_matches_independent_block_sum() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let x0 = demo_x0();
    let refs: Vec<NominalTrajectory> = (0..sys.len()).map(|i| c.solve_inner(i, &local(&x0, i), 0).unwrap()).collect();
    let inbox: BTreeMap<usize, &NominalTrajectory> = [(0, &refs[0]), (2, &refs[2])].into_iter().collect();
    let preview = c.preview_disturbance(1, &inbox).unwrap();
    let (a, b) = (sys.a(), sys.b());
    for k in 0..N {
        let mut want = DVector::<f64>::zeros(2);
        for j in [0usize, 2] {
            want += a.view((2, 2 * j), (2, 2)) * &refs[j].states[k];
            want += b.view((2, j), (2, 1)) * &refs[j].inputs[k];
        }
        assert_eq!(preview.d_seq[k], want);
    }
}

#[test]
fn preview_with_unit_coupling_is_the_neighbour_state() {
    let (sys, design) = scalar_system_with_design();
    let c = Controllers::new(&sys, &design, N, InitialConstraint::Nested).unwrap();
    let mut r = NominalTrajectory::zero(1, 0, 1, 1, N);
    for k in 0..=N {
        r.states[k] = dvector![k as f64 * 0.01];
    }
    let inbox: BTreeMap<usize, &NominalTrajectory> = [(1, &r)].into_iter().collect();
    let preview = c.preview_disturbance(0, &inbox).unwrap();
    for k in 0..N {
        // coupling A_12 = 0.1
        assert_eq!(preview.d_seq[k][0], 0.1 * r.states[k][0]);
    }
    let empty = BTreeMap::new();
    assert!(matches!(c.preview_disturbance(0, &empty), Err(ControlError::MissingBroadcast { subsystem: 0, neighbor: 1 })));
}

fn scalar_system_with_design() -> (chaintube::model::CoupledSystem, chaintube::synthesis::TubeDesign) {
    let sys = scalar_pair();
    let design = chaintube::synthesis::synthesize(&sys, &chaintube::synthesis::SynthesisOptions::for_system(&sys)).unwrap();
    (sys, design)
}

#[test]
fn outer_plan_costs_no_more_than_the_candidate() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let x0 = demo_x0();
    for i in 0..sys.len() {
        let inner = c.solve_inner(i, &local(&x0, i), 0).unwrap();
        let x = inner.states[0].clone();
        let preview = zero_preview(i, 2);
        let cand = c.theorem3_candidate(i, &x, &inner, &preview).unwrap().unwrap();
        assert!(c.outer_violation(i, &x, &inner, &preview, &cand).unwrap() <= AUDIT_TOL);
        let outer = c.solve_outer(i, &x, &inner, &preview, 0).unwrap();
        assert!(c.trajectory_cost(&outer).unwrap() <= c.trajectory_cost(&cand).unwrap() + 1e-9);
    }
}

#[test]
fn outer_plan_satisfies_brf_at_start() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let x0 = demo_x0();
    let refs: Vec<NominalTrajectory> = (0..sys.len()).map(|i| c.solve_inner(i, &local(&x0, i), 0).unwrap()).collect();
    for i in 0..sys.len() {
        let inbox: BTreeMap<usize, &NominalTrajectory> = sys.subsystems[i].neighbors().map(|j| (j, &refs[j])).collect();
        let preview = c.preview_disturbance(i, &inbox).unwrap();
        let outer = c.solve_outer(i, &local(&x0, i), &refs[i], &preview, 0).unwrap();
        let h = &design.subsystems[i].h;
        for k in 1..=N {
            assert!(h.contains(&(&outer.states[k] - &refs[i].states[k]), 1e-8), "truck {} step {k}", i + 1);
        }
        assert!(design.subsystems[i].s.contains(&(local(&x0, i) - &outer.states[0]), 1e-8));
    }
}

#[test]
fn control_action_applies_the_outer_feedback() {
    let (_, design) = demo();
    let d = &design.subsystems[0];
    let mut outer = NominalTrajectory::zero(0, 0, 2, 1, N);
    outer.states[0] = dvector![0.1, -0.2];
    outer.inputs[0] = dvector![0.3];
    assert_eq!(control_action(&dvector![0.1, -0.2], &outer, d), dvector![0.3]);
    let u = control_action(&dvector![0.2, -0.2], &outer, d);
    assert!((u[0] - (0.3 + 0.1 * d.k_hat[(0, 0)])).abs() < 1e-15);
}

#[test]
fn cost_evaluation_by_hand() {
    let q = dmatrix![2.0, 0.0; 0.0, 1.0];
    let r = dmatrix![3.0];
    let p = dmatrix![1.0, 1.0; 1.0, 4.0];
    let states = vec![dvector![1.0, 2.0], dvector![0.0, -1.0], dvector![1.0, 1.0]];
    let inputs = vec![dvector![1.0], dvector![-2.0]];
    // (2 + 4 + 3) + (0 + 1 + 12) = 22, terminal 1 + 2 + 4 = 7
    assert_eq!(stage_cost(&states[0], &inputs[0], &q, &r), 9.0);
    assert_eq!(evaluate_cost(&states, &inputs, &q, &r, None).unwrap(), 22.0);
    assert_eq!(evaluate_cost(&states, &inputs, &q, &r, Some(&p)).unwrap(), 29.0);
    assert!(evaluate_cost(&states[..1], &inputs, &q, &r, None).is_err());
}

#[test]
fn centralized_and_local_agree_without_coupling() {
    let (sys, design) = decoupled();
    let x0 = dvector![0.3, -0.5, -0.2, 0.4];
    let opts = RunOptions::default();
    let cmpc = run_baseline(sys, design, &x0, &opts, ControllerKind::Cmpc).unwrap();
    let dempc = run_baseline(sys, design, &x0, &opts, ControllerKind::Dempc).unwrap();
    assert!(cmpc.completed() && dempc.completed());
    assert!((cmpc.total_cost() - dempc.total_cost()).abs() < 1e-6);
}

#[test]
fn tube_controller_input_uses_the_inner_gain() {
    let (sys, design) = demo();
    let c = Controllers::new(sys, design, N, InitialConstraint::Nested).unwrap();
    let x = local(&demo_x0(), 1);
    let (traj, u) = c.tmpc(1, &x, 0).unwrap();
    let want = &traj.inputs[0] + &design.subsystems[1].k_t * (&x - &traj.states[0]);
    assert_eq!(u, want);
    assert!(design.subsystems[1].z.contains(&(&x - &traj.states[0]), 1e-8));
}
