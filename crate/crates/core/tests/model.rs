use chaintube::geometry::support;
use chaintube::model::{
    build_four_trucks, coupling_disturbance_set, decompose, step_true_plant, truck_chain_continuous, TruckChainParams,
};
use chaintube::numkernel::spectral_radius;
use nalgebra::{DMatrix, DVector};

const X0: [f64; 8] = [1.8, -2.0, 0.5, 7.1, -0.9, -7.0, -1.8, 2.0];

fn corners(lo: &[f64], hi: &[f64]) -> Vec<DVector<f64>> {
    let n = lo.len();
    (0..1usize << n).map(|m| DVector::from_fn(n, |j, _| if m >> j & 1 == 1 { hi[j] } else { lo[j] })).collect()
}

#[test]
fn continuous_chain_follows_newtons_law() {
    let p = TruckChainParams::default();
    let (a, b) = truck_chain_continuous(&p).unwrap();
    let (m, k, c) = (&p.masses, &p.springs, &p.dampers);
    // position rows: only the own velocity
    for i in 0..4 {
        for j in 0..8 {
            assert_eq!(a[(2 * i, j)], if j == 2 * i + 1 { 1.0 } else { 0.0 });
        }
        assert_eq!(a[(2 * i, 2 * i)], 0.0);
        assert_eq!(b[(2 * i + 1, i)], 1.0 / m[i]);
    }
    // truck 2 (index 1) is pulled by trucks 1 and 3
    let row = a.row(3);
    assert!((row[0] - k[0] / m[1]).abs() < 1e-15);
    assert!((row[1] - c[0] / m[1]).abs() < 1e-15);
    assert!((row[2] + (k[0] + k[1]) / m[1]).abs() < 1e-15);
    assert!((row[3] + (c[0] + c[1]) / m[1]).abs() < 1e-15);
    assert!((row[4] - k[1] / m[1]).abs() < 1e-15);
    assert!((row[5] - c[1] / m[1]).abs() < 1e-15);
    assert_eq!(row[6], 0.0);
    // marginal stability: eigenvalues with non-positive real part, one at zero
    let eig = a.clone().complex_eigenvalues();
    assert!(eig.iter().all(|z| z.re <= 1e-9));
    // the rigid-body mode is a Jordan pair, so its computed eigenvalues sit near sqrt(eps)
    assert!(eig.iter().any(|z| z.norm() < 1e-6));
}

#[test]
fn benchmark_topology_and_marginal_stability() {
    let sys = build_four_trucks(0.1).unwrap();
    let nb: Vec<Vec<usize>> = sys.subsystems.iter().map(|s| s.neighbors().collect()).collect();
    assert_eq!(nb, vec![vec![1], vec![0, 2], vec![1, 3], vec![2]]);
    assert!((spectral_radius(sys.a()).unwrap() - 1.0).abs() < 1e-6);
    let (a, b) = sys.assemble();
    assert_eq!(&a, sys.a());
    assert_eq!(&b, sys.b());
    sys.validate().unwrap();
}

#[test]
fn disturbance_set_matches_vertex_sums() {
    let sys = build_four_trucks(0.1).unwrap();
    for i in 0..4 {
        let w = coupling_disturbance_set(&sys, i).unwrap();
        // every off-diagonal block above the residual threshold, straight from A and B
        let mut cloud = vec![DVector::zeros(2)];
        for j in 0..4 {
            if j == i {
                continue;
            }
            let aij = sys.a().view((2 * i, 2 * j), (2, 2)).into_owned();
            let bij = sys.b().view((2 * i, j), (2, 1)).into_owned();
            if aij.amax().max(bij.amax()) <= 1e-9 {
                continue;
            }
            let pts: Vec<DVector<f64>> = corners(&[-2.0, -8.0, -4.0], &[2.0, 8.0, 4.0])
                .into_iter()
                .map(|v| &aij * v.rows(0, 2) + &bij * v.rows(2, 1))
                .collect();
            cloud = cloud.iter().flat_map(|c| pts.iter().map(move |p| c + p)).collect();
        }
        for k in 0..24 {
            let t = k as f64 * std::f64::consts::PI / 12.0;
            let d = DVector::from_vec(vec![t.cos(), t.sin()]);
            let oracle = cloud.iter().map(|p| p.dot(&d)).fold(f64::NEG_INFINITY, f64::max);
            let got = support(&w, &d).unwrap();
            assert!((got - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "truck {} direction {k}: {got} vs {oracle}", i + 1);
        }
    }
    // truck 1 sits on the stiff link, truck 3 does not
    let w1 = coupling_disturbance_set(&sys, 0).unwrap();
    let w3 = coupling_disturbance_set(&sys, 2).unwrap();
    for k in 0..24 {
        let t = k as f64 * std::f64::consts::PI / 12.0;
        let d = DVector::from_vec(vec![t.cos(), t.sin()]);
        assert!(support(&w1, &d).unwrap() > support(&w3, &d).unwrap());
    }
}

#[test]
fn plant_step_matches_matvec_and_block_sum() {
    let sys = build_four_trucks(0.1).unwrap();
    let x = DVector::from_row_slice(&X0);
    let zero = step_true_plant(&sys, &DVector::zeros(8), &DVector::zeros(4)).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));

    let next = step_true_plant(&sys, &x, &DVector::zeros(4)).unwrap();
    for r in 0..8 {
        let mut acc = 0.0;
        for c in 0..8 {
            acc += sys.a()[(r, c)] * X0[c];
        }
        assert!((next[r] - acc).abs() < 1e-12);
    }

    let u = DVector::from_row_slice(&[0.3, -1.0, 2.0, 0.5]);
    let next = step_true_plant(&sys, &x, &u).unwrap();
    for s in &sys.subsystems {
        let i = s.index;
        let mut local = &s.a * sys.local_state(&x, i) + &s.b * sys.local_input(&u, i);
        for (j, c) in s.couplings.iter().chain(s.residual.iter()) {
            local += &c.a * sys.local_state(&x, *j) + &c.b * sys.local_input(&u, *j);
        }
        assert!((local - sys.local_state(&next, i)).amax() < 1e-12);
    }
}

#[test]
fn decoupled_blocks_give_origin_disturbance() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.8]));
    let b = DMatrix::identity(2, 2);
    let sets = (0..2)
        .map(|_| {
            (
                chaintube::geometry::HPolytope::from_bounds(&[-1.0], &[1.0]).unwrap(),
                chaintube::geometry::HPolytope::from_bounds(&[-1.0], &[1.0]).unwrap(),
            )
        })
        .collect();
    let sys = decompose(&a, &b, &[1, 1], &[1, 1], sets, None).unwrap();
    for i in 0..2 {
        let w = coupling_disturbance_set(&sys, i).unwrap();
        assert_eq!(support(&w, &DVector::from_element(1, 1.0)).unwrap(), 0.0);
        assert_eq!(support(&w, &DVector::from_element(1, -1.0)).unwrap(), 0.0);
    }
}
