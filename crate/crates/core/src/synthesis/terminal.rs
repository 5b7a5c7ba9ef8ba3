use nalgebra::DMatrix;

use super::all_couplings;
use crate::geometry::{max_admissible_invariant, support, GeomError, GeomResult, HPolytope};
use crate::model::CoupledSystem;

const SLACK_TOL: f64 = 1e-9;
const COLLAPSE_RADIUS: f64 = 1e-6;

/// Radius of the largest origin-centred box inside `p` (negative when the
/// origin is outside).
pub(crate) fn inner_box_radius(p: &HPolytope) -> f64 {
    if p.is_empty() {
        return f64::NEG_INFINITY;
    }
    (0..p.num_rows())
        .map(|i| {
            let n1 = p.a().row(i).abs().sum();
            if n1 == 0.0 {
                f64::INFINITY
            } else {
                p.b()[i] / n1
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Outer terminal sets whose product is positively invariant for the global
/// closed loop `A + B diag(K̂)`.
///
/// Starts from the local maximal admissible invariant set in
/// `X̂̂_i ∩ {x : K̂_i x ∈ Û̂_i}` and shrinks every set until
/// `(A_ii + B_ii K̂_i) X_i ⊕ ⊕_j (A_ij + B_ij K̂_j) X_j ⊆ X_i` holds for all
/// `i`, stopping once no support moves by more than 1e-9. The sets are
/// updated together from the previous iterate, so the result does not depend
/// on subsystem order.
pub fn coupled_terminal_sets(
    sys: &CoupledSystem,
    k_hat: &[DMatrix<f64>],
    x_hh: &[HPolytope],
    u_hh: &[HPolytope],
    invariant_cap: usize,
    cap: usize,
) -> GeomResult<Vec<HPolytope>> {
    let m = sys.len();
    let subs = &sys.subsystems;
    let a_cl: Vec<DMatrix<f64>> = (0..m).map(|i| &subs[i].a + &subs[i].b * &k_hat[i]).collect();
    let cross: Vec<Vec<(usize, DMatrix<f64>)>> = (0..m)
        .map(|i| all_couplings(sys, i).into_iter().map(|(j, (a, b))| (j, a + b * &k_hat[j])).collect())
        .collect();

    let mut omega = Vec::with_capacity(m);
    for i in 0..m {
        let admissible = x_hh[i].intersect(&u_hh[i].preimage(&k_hat[i])?)?;
        let o = max_admissible_invariant(&a_cl[i], &admissible, invariant_cap)?;
        check_radius(&o, i)?;
        omega.push(o);
    }

    for _ in 0..cap {
        let mut next = Vec::with_capacity(m);
        let mut moved = false;
        for i in 0..m {
            let cur = &omega[i];
            let mut rows = Vec::new();
            for r in 0..cur.num_rows() {
                let a = cur.a().row(r).transpose();
                let mut off = cur.b()[r];
                for (j, mij) in &cross[i] {
                    off -= support(&omega[*j], &(mij.transpose() * &a))?;
                }
                let dir = a_cl[i].transpose() * &a;
                if support(cur, &dir)? > off + SLACK_TOL * (1.0 + off.abs()) {
                    rows.push((dir, off));
                }
            }
            if rows.is_empty() {
                next.push(cur.clone());
                continue;
            }
            moved = true;
            let n = cur.dim();
            let cut = HPolytope::new(
                DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]),
                nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
            )?;
            let shrunk = if cut.is_empty() { cut } else { cur.intersect(&cut)? };
            check_radius(&shrunk, i)?;
            next.push(shrunk);
        }
        omega = next;
        if !moved {
            return Ok(omega);
        }
    }
    Err(GeomError::IterationLimit { iterations: cap, partial: None })
}

fn check_radius(p: &HPolytope, i: usize) -> GeomResult<()> {
    let r = inner_box_radius(p);
    if !(r >= COLLAPSE_RADIUS) {
        return Err(GeomError::InvalidInput(format!(
            "terminal set of subsystem {} collapsed (inner radius {r:.3e} < {COLLAPSE_RADIUS:e})",
            i + 1
        )));
    }
    Ok(())
}
