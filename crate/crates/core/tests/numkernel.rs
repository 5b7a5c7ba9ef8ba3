use chaintube::numkernel::{dlqr, dlyap, solve_lp, solve_qp, spectral_radius, zoh_discretize, NumError, QpProblem};
use nalgebra::{dmatrix, DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best objective over all basic feasible points of a 3-D LP.
fn lp_vertex_oracle(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    let m = a.nrows();
    let mut best: Option<f64> = None;
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                let mat = Matrix3::from_fn(|r, col| a[([i, j, k][r], col)]);
                if mat.determinant().abs() < 1e-9 {
                    continue;
                }
                let x = mat.lu().solve(&Vector3::new(b[i], b[j], b[k])).unwrap();
                let x = DVector::from_column_slice(x.as_slice());
                if (a * &x - b).max() <= 1e-9 {
                    let v = c.dot(&x);
                    best = Some(best.map_or(v, |bv: f64| bv.max(v)));
                }
            }
        }
    }
    best
}

/// Minimum over every active-set guess whose equality-constrained minimizer
/// is primal feasible. The true optimum is one of these points, and every
/// other one is feasible, so the minimum is the optimal value.
fn qp_active_set_oracle(h: &DMatrix<f64>, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    let (m, n) = a.shape();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if rows.len() > n {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b[i];
        }
        rhs.rows_mut(0, n).copy_from(&(-f));
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        if (a * &x - b).max() <= 1e-9 {
            let v = 0.5 * x.dot(&(h * &x)) + f.dot(&x);
            best = Some(best.map_or(v, |bv: f64| bv.min(v)));
        }
    }
    best
}

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 100 {
        let m = rng.random_range(4..10);
        let mut a = DMatrix::from_fn(m, 3, |_, _| rng.random_range(-1.0..1.0));
        // bounding box keeps every instance bounded
        a = DMatrix::from_fn(m + 6, 3, |i, j| {
            if i < m {
                a[(i, j)]
            } else {
                let axis = (i - m) / 2;
                let sign = if (i - m) % 2 == 0 { 1.0 } else { -1.0 };
                if axis == j { sign } else { 0.0 }
            }
        });
        let b = DVector::from_fn(m + 6, |i, _| if i < m { rng.random_range(-0.2..1.0) } else { 2.0 });
        let c = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        match (solve_lp(&c, &a, &b), lp_vertex_oracle(&c, &a, &b)) {
            (Ok(sol), Some(v)) => {
                assert!((sol.value - v).abs() < 1e-9, "LP value {} vs oracle {v}", sol.value);
                assert!((&a * &sol.x - &b).max() <= 1e-9);
                checked += 1;
            }
            (Err(NumError::Infeasible), None) => {}
            (got, want) => panic!("solver {got:?} disagrees with oracle {want:?}"),
        }
    }
}

#[test]
fn lp_reports_unbounded_and_infeasible() {
    let a = dmatrix![-1.0, 0.0; 0.0, -1.0];
    let b = DVector::from_element(2, 0.0);
    assert_eq!(solve_lp(&DVector::from_element(2, 1.0), &a, &b).unwrap_err(), NumError::Unbounded);
    let a = dmatrix![1.0; -1.0];
    let b = DVector::from_vec(vec![-1.0, -1.0]);
    assert_eq!(solve_lp(&DVector::from_element(1, 1.0), &a, &b).unwrap_err(), NumError::Infeasible);
}

#[test]
fn qp_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut solved = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
        let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let m = 2 * n + 2;
        let a = DMatrix::from_fn(m, n, |i, j| {
            if i < 2 * n {
                if i / 2 == j { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }
            } else {
                0.0
            }
        });
        let mut a = a;
        for i in 2 * n..m {
            for j in 0..n {
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let b = DVector::from_fn(m, |i, _| if i < 2 * n { 1.0 } else { rng.random_range(0.0..1.0) });
        let p = QpProblem::inequality(h.clone(), f.clone(), a.clone(), b.clone()).unwrap();
        let sol = solve_qp(&p).unwrap();
        let want = qp_active_set_oracle(&h, &f, &a, &b).unwrap();
        assert!((sol.value - want).abs() < 1e-8, "QP value {} vs oracle {want}", sol.value);
        let (stat, primal, comp) = p.kkt_residual(&sol);
        assert!(stat < 1e-8 && primal < 1e-8 && comp < 1e-8);
        solved += 1;
    }
    assert_eq!(solved, 100);
}

#[test]
fn qp_is_bit_deterministic() {
    let h = dmatrix![2.0, 0.5; 0.5, 1.0];
    let f = DVector::from_vec(vec![-1.0, 3.0]);
    let a = dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0];
    let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let p = QpProblem::inequality(h, f, a, b).unwrap();
    let first = solve_qp(&p).unwrap();
    for _ in 0..5 {
        let again = solve_qp(&p).unwrap();
        assert_eq!(first.x, again.x);
        assert_eq!(first.value.to_bits(), again.value.to_bits());
    }
}

#[test]
fn zoh_double_integrator() {
    let ts = 0.1;
    let (ad, bd) = zoh_discretize(&dmatrix![0.0, 1.0; 0.0, 0.0], &dmatrix![0.0; 1.0], ts).unwrap();
    assert!((ad - dmatrix![1.0, ts; 0.0, 1.0]).amax() < 1e-14);
    assert!((bd - dmatrix![ts * ts / 2.0; ts]).amax() < 1e-14);
}

#[test]
fn zoh_semigroup() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let ac = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
        let bc = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let ts = rng.random_range(0.01..0.5);
        let (a1, b1) = zoh_discretize(&ac, &bc, ts).unwrap();
        let (a2, b2) = zoh_discretize(&ac, &bc, 2.0 * ts).unwrap();
        assert!((&a1 * &a1 - a2).amax() < 1e-10);
        assert!((&a1 * &b1 + &b1 - b2).amax() < 1e-10);
    }
}

#[test]
fn riccati_residual_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.5..1.5));
        let b = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
        let ctrb: DMatrix<f64> = DMatrix::from_columns(&[b.column(0).into_owned(), (&a * &b).column(0).into_owned()]);
        if f64::abs(ctrb.determinant()) < 0.05 {
            continue;
        }
        let q = DMatrix::identity(2, 2);
        let r = dmatrix![0.5];
        let res = dlqr(&a, &b, &q, &r).unwrap();
        let p = &res.p;
        let s = &r + b.transpose() * p * &b;
        let rhs = &q + a.transpose() * p * &a - a.transpose() * p * &b * s.try_inverse().unwrap() * b.transpose() * p * &a;
        assert!((p - rhs).amax() < 1e-9);
        assert!(spectral_radius(&(&a + &b * &res.k)).unwrap() < 1.0);
    }
}

#[test]
fn lyapunov_residual_on_random_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut n = 0;
    while n < 20 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.7..0.7));
        if spectral_radius(&a).unwrap() > 0.95 {
            continue;
        }
        let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = &g * g.transpose();
        let p = dlyap(&a, &q).unwrap();
        assert!((&p - a.transpose() * &p * &a - &q).amax() < 1e-10);
        n += 1;
    }
}

#[test]
fn companion_matrix_root_modulus() {
    // (z − 0.9)(z² + 0.25) = z³ − 0.9 z² + 0.25 z − 0.225: roots 0.9, ±0.5i
    let c = dmatrix![0.9, -0.25, 0.225; 1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
    assert!((spectral_radius(&c).unwrap() - 0.9).abs() < 1e-9);
    // (z + 1.2)(z − 0.3)
    let c = dmatrix![-0.9, 0.36; 1.0, 0.0];
    assert!((spectral_radius(&c).unwrap() - 1.2).abs() < 1e-9);
}
