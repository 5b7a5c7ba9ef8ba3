mod common;

use chaintube::controllers::{Controllers, InitialConstraint, Stage};
use chaintube::runtime::{failure_stage, run, run_baseline, ControllerKind, RunOptions, SolveStatus};
use common::*;
use nalgebra::DVector;

#[test]
fn equilibrium_stays_at_zero_for_every_controller() {
    let (sys, design) = demo();
    let x0 = DVector::zeros(8);
    for kind in ControllerKind::ALL {
        let log = run_baseline(sys, design, &x0, &RunOptions::default(), kind).unwrap();
        assert!(log.completed(), "{kind}");
        assert_eq!(log.records.len(), 50);
        for r in &log.records {
            assert!(r.x.iter().chain(r.u.iter()).chain(&r.stage_costs).all(|v| *v == 0.0), "{kind} t = {}", r.t);
        }
        assert_eq!(log.total_cost(), 0.0);
        assert_eq!(log.final_state.amax(), 0.0);
    }
}

#[test]
fn chain_run_keeps_every_tube() {
    let (sys, design) = demo();
    let log = run(sys, design, &demo_x0(), &RunOptions::default()).unwrap();
    assert!(log.completed(), "{:?}", log.failure);
    assert!(log.constraint_violation(sys) <= 1e-6);
    for r in &log.records {
        for (i, d) in design.subsystems.iter().enumerate() {
            assert!(d.z.contains(r.z[i].as_ref().unwrap(), 1e-8), "z at t = {}", r.t);
            assert!(d.s.contains(r.s[i].as_ref().unwrap(), 1e-8), "s at t = {}", r.t);
            if r.t >= 1 {
                assert!(d.h.contains(r.e[i].as_ref().unwrap(), 1e-8), "e at t = {}", r.t);
            }
            assert!(r.candidate_violation[i].unwrap() <= 1e-8, "candidate at t = {}", r.t);
        }
    }
    assert!(log.final_state.amax() < log.records[0].x.amax());
}

#[test]
fn replay_is_bit_identical() {
    let (sys, design) = demo();
    let a = run(sys, design, &demo_x0(), &RunOptions::default()).unwrap();
    let b = run(sys, design, &demo_x0(), &RunOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(sys), b.to_csv(sys));
}

#[test]
fn agent_schedule_does_not_change_the_log() {
    let (sys, design) = demo();
    let base = run(sys, design, &demo_x0(), &RunOptions::default()).unwrap();
    for order in [vec![3, 2, 1, 0], vec![2, 0, 3, 1]] {
        let opts = RunOptions { order: Some(order), ..RunOptions::default() };
        assert_eq!(run(sys, design, &demo_x0(), &opts).unwrap(), base);
    }
    let threaded = RunOptions { parallel: true, order: Some(vec![1, 3, 0, 2]), ..RunOptions::default() };
    assert_eq!(run(sys, design, &demo_x0(), &threaded).unwrap(), base);
    for kind in [ControllerKind::Tmpc, ControllerKind::Dempc] {
        let a = run_baseline(sys, design, &demo_x0(), &RunOptions::default(), kind).unwrap();
        let b = run_baseline(sys, design, &demo_x0(), &threaded, kind).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn longer_period_shifts_between_solves() {
    let (sys, design) = demo();
    let opts = RunOptions { period: 3, steps: 12, ..RunOptions::default() };
    let log = run(sys, design, &demo_x0(), &opts).unwrap();
    assert!(log.completed(), "{:?}", log.failure);
    let ctl = Controllers::new(sys, design, opts.horizon, InitialConstraint::Nested).unwrap();
    for r in &log.records {
        let want = if r.t % 3 == 0 { SolveStatus::Solved } else { SolveStatus::Shifted };
        assert!(r.status.iter().all(|s| *s == want), "t = {}", r.t);
        if r.t % 3 != 0 {
            let prev = &log.records[r.t - 1];
            for i in 0..sys.len() {
                let shifted = ctl.shift_inner(prev.inner[i].as_ref().unwrap()).unwrap();
                assert_eq!(&shifted, r.inner[i].as_ref().unwrap());
            }
        }
    }
}

#[test]
fn csv_layout() {
    let (sys, design) = demo();
    let opts = RunOptions { steps: 5, ..RunOptions::default() };
    let log = run(sys, design, &demo_x0(), &opts).unwrap();
    let csv = log.to_csv(sys);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "t,x1,x2,x3,x4,x5,x6,x7,x8,u1,u2,u3,u4,status1,status2,status3,status4,cost1,cost2,cost3,cost4"
    );
    assert_eq!(lines.len(), 1 + 5 + 1);
    for (k, line) in lines[1..6].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 21);
        assert_eq!(cells[0], k.to_string());
        for (c, v) in cells[1..9].iter().zip(log.records[k].x.iter()) {
            // 17 significant digits survive the round trip
            assert_eq!(c.parse::<f64>().unwrap(), *v);
            assert_eq!(c.split('e').next().unwrap().trim_start_matches('-').len(), 18);
        }
        assert!(cells[13..17].iter().all(|s| *s == "0"));
    }
    let last: Vec<&str> = lines[6].split(',').collect();
    assert_eq!(last[0], "5");
    assert_eq!(last.len(), 21);
    assert!(last[9..].iter().all(|c| c.is_empty()));
}

#[test]
fn infeasible_start_truncates_the_log() {
    let (sys, design) = demo();
    let mut x0 = demo_x0();
    x0[0] = 5.0;
    let log = run(sys, design, &x0, &RunOptions::default()).unwrap();
    let f = log.failure.as_ref().unwrap();
    assert_eq!(f.t, 0);
    assert_eq!(f.subsystem, 0);
    assert_eq!(failure_stage(&f.error), Some(Stage::Inner));
    assert!(log.records.is_empty());
    assert!(!log.completed());
}

#[test]
fn comparison_costs_are_ordered_on_the_demo() {
    let (sys, design) = demo();
    let cost = |k| {
        let log = run_baseline(sys, design, &demo_x0(), &RunOptions::default(), k).unwrap();
        assert!(log.completed(), "{k}: {:?}", log.failure);
        log.total_cost()
    };
    let (chain, cmpc, tmpc) = (cost(ControllerKind::Chain), cost(ControllerKind::Cmpc), cost(ControllerKind::Tmpc));
    assert!(cmpc <= chain && chain < tmpc, "cmpc {cmpc} chain {chain} tmpc {tmpc}");
}
