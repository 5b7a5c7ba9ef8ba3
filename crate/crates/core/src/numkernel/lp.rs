use nalgebra::{DMatrix, DVector};

use super::{NumError, NumResult};

/// Optimal point of `max c·x s.t. A x ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Constraint rows that define the optimal vertex.
    pub active: Vec<usize>,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

/// Maximizes `c·x` subject to `A x ≤ b` with `x` free.
///
/// The problem is solved through its dual `min bᵀy s.t. Aᵀy = c, y ≥ 0`,
/// whose basis has only `n` rows. That keeps pivots cheap for the tall,
/// narrow constraint matrices produced by polytope support queries.
pub fn solve_lp(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> NumResult<LpSolution> {
    check_dims(a, b)?;
    if c.len() != a.ncols() {
        return Err(NumError::DimensionMismatch(format!(
            "objective has length {}, constraint matrix has {} columns",
            c.len(),
            a.ncols()
        )));
    }
    check_finite(c.iter().chain(a.iter()).chain(b.iter()))?;

    let (m, n) = a.shape();
    // dual: columns are constraint rows of the primal, rows are primal variables
    let mut mat = DMatrix::zeros(n, m);
    for i in 0..m {
        for j in 0..n {
            mat[(j, i)] = a[(i, j)];
        }
    }
    match standard_form_min(&mat, c, b)? {
        StdOutcome::Optimal { y, multipliers, basis, value } => {
            let _ = y;
            let x = polish(a, b, &basis, multipliers)?;
            let value_primal = c.dot(&x);
            debug_assert!((value_primal - value).abs() <= 1e-6 * (1.0 + value.abs()));
            Ok(LpSolution { x, value: value_primal, active: basis })
        }
        StdOutcome::Unbounded => Err(NumError::Infeasible),
        StdOutcome::Infeasible => {
            // dual infeasible: primal is either unbounded or infeasible
            match find_feasible_point(a, b)? {
                Some(_) => Err(NumError::Unbounded),
                None => Err(NumError::Infeasible),
            }
        }
    }
}

/// Phase-1 search for a point with `A x ≤ b`.
///
/// Minimizes the uniform constraint violation `t ≥ 0` over `A x − t ≤ b`.
/// Returns `None` when the optimal violation exceeds the feasibility
/// tolerance (`1e-9` relative to the offsets).
pub fn find_feasible_point(a: &DMatrix<f64>, b: &DVector<f64>) -> NumResult<Option<DVector<f64>>> {
    check_dims(a, b)?;
    check_finite(a.iter().chain(b.iter()))?;
    let (m, n) = a.shape();
    if m == 0 {
        return Ok(Some(DVector::zeros(n)));
    }
    // dual of: max -t  s.t.  [A -1; 0 -1] (x, t) ≤ (b, 0)
    let mut mat = DMatrix::zeros(n + 1, m + 1);
    for i in 0..m {
        for j in 0..n {
            mat[(j, i)] = a[(i, j)];
        }
        mat[(n, i)] = -1.0;
    }
    mat[(n, m)] = -1.0;
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = -1.0;
    let mut cost = DVector::zeros(m + 1);
    cost.rows_mut(0, m).copy_from(b);

    let scale = 1.0 + b.amax();
    let tol = 1e-9 * scale;
    let origin = DVector::zeros(n);
    if b.min() >= -tol {
        return Ok(Some(origin));
    }
    match standard_form_min(&mat, &rhs, &cost)? {
        StdOutcome::Optimal { multipliers, basis, .. } => {
            let candidate = multipliers.rows(0, n).into_owned();
            if (a * &candidate - b).max() <= tol {
                return Ok(Some(candidate));
            }
            // the tableau multipliers can drift on thin sets; re-solve the
            // active rows of the auxiliary problem directly
            let mut aux_a = DMatrix::zeros(m + 1, n + 1);
            aux_a.view_mut((0, 0), (m, n)).copy_from(a);
            for i in 0..=m {
                aux_a[(i, n)] = -1.0;
            }
            let mut aux_b = DVector::zeros(m + 1);
            aux_b.rows_mut(0, m).copy_from(b);
            let xt = polish(&aux_a, &aux_b, &basis, multipliers).unwrap_or_else(|_| DVector::zeros(n + 1));
            let x = xt.rows(0, n).into_owned();
            if (a * &x - b).max() <= tol {
                Ok(Some(x))
            } else {
                Ok(None)
            }
        }
        // the auxiliary problem is always feasible and bounded
        _ => Err(NumError::NumericalFailure("phase-1 auxiliary LP did not solve".into())),
    }
}

fn check_dims(a: &DMatrix<f64>, b: &DVector<f64>) -> NumResult<()> {
    if a.nrows() != b.len() {
        return Err(NumError::DimensionMismatch(format!(
            "constraint matrix has {} rows, offset vector has {}",
            a.nrows(),
            b.len()
        )));
    }
    Ok(())
}

fn check_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> NumResult<()> {
    if it.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumError::InvalidProblem("non-finite data".into()))
    }
}

/// Re-solves the primal vertex from the basic rows when the dual basis is
/// purely structural; this trims the round-off accumulated in the tableau.
fn polish(a: &DMatrix<f64>, b: &DVector<f64>, basis: &[usize], multipliers: DVector<f64>) -> NumResult<DVector<f64>> {
    let n = a.ncols();
    if basis.len() != n || n == 0 {
        return Ok(multipliers);
    }
    let mut sub = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (r, &i) in basis.iter().enumerate() {
        sub.set_row(r, &a.row(i));
        rhs[r] = b[i];
    }
    let sv = sub.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= 1e12) {
        return Err(NumError::NumericalFailure(format!("basis condition estimate {cond:.3e}")));
    }
    Ok(match sub.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => {
            let resid = (&sub * &x - &rhs).amax();
            if resid <= 1e-12 * (1.0 + rhs.amax()) && (&x - &multipliers).amax() <= 1e-6 * (1.0 + x.amax()) {
                x
            } else {
                multipliers
            }
        }
        _ => multipliers,
    })
}

enum StdOutcome {
    Optimal {
        y: DVector<f64>,
        /// Simplex multipliers of the equality rows.
        multipliers: DVector<f64>,
        /// Structural columns in the final basis (sorted).
        basis: Vec<usize>,
        value: f64,
    },
    Infeasible,
    Unbounded,
}

/// Two-phase tableau simplex for `min gᵀy s.t. M y = h, y ≥ 0`.
///
/// Pricing is Dantzig's rule with lowest-index tie-breaking; after a run of
/// degenerate pivots it falls back to Bland's rule for the rest of the solve.
fn standard_form_min(mat: &DMatrix<f64>, h: &DVector<f64>, g: &DVector<f64>) -> NumResult<StdOutcome> {
    let (r, q) = mat.shape();
    let width = q + r + 1;
    let rhs_col = q + r;
    let mut t = vec![0.0; (r + 1) * width];
    let idx = |i: usize, j: usize| i * width + j;

    let mut sign = vec![1.0; r];
    for i in 0..r {
        let s = if h[i] < 0.0 { -1.0 } else { 1.0 };
        sign[i] = s;
        for j in 0..q {
            t[idx(i, j)] = s * mat[(i, j)];
        }
        t[idx(i, q + i)] = 1.0;
        t[idx(i, rhs_col)] = s * h[i];
    }
    // phase-1 objective: sum of artificials
    for j in 0..q {
        let mut s = 0.0;
        for i in 0..r {
            s += t[idx(i, j)];
        }
        t[idx(r, j)] = -s;
    }
    let mut s = 0.0;
    for i in 0..r {
        s += t[idx(i, rhs_col)];
    }
    t[idx(r, rhs_col)] = -s;

    let mut basis: Vec<usize> = (q..q + r).collect();
    let scale = 1.0 + h.amax();
    let cap = 50 * (q + r) + 1000;

    let mut tab = Tableau { t, width, rows: r, basis: &mut basis };
    match tab.run(q + r, cap, true)? {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            return Err(NumError::NumericalFailure("phase-1 objective unbounded".into()));
        }
    }
    let infeas = -tab.t[idx(r, rhs_col)];
    if infeas > 1e-9 * scale {
        return Ok(StdOutcome::Infeasible);
    }

    // drive zero-level artificials out of the basis where possible
    for row in 0..r {
        if tab.basis[row] >= q {
            if let Some(j) = (0..q).find(|&j| tab.t[idx(row, j)].abs() > 1e-9) {
                tab.pivot(row, j);
            }
        }
    }

    // phase-2 objective
    for j in 0..width {
        let base = if j < q { g[j] } else { 0.0 };
        let mut s = base;
        for i in 0..r {
            let bj = tab.basis[i];
            let cb = if bj < q { g[bj] } else { 0.0 };
            s -= cb * tab.t[idx(i, j)];
        }
        tab.t[idx(r, j)] = s;
    }
    // rhs entry holds minus the objective value; fix sign convention
    let mut val = 0.0;
    for i in 0..r {
        let bj = tab.basis[i];
        if bj < q {
            val += g[bj] * tab.t[idx(i, rhs_col)];
        }
    }
    tab.t[idx(r, rhs_col)] = -val;

    match tab.run(q, cap, false)? {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => return Ok(StdOutcome::Unbounded),
    }

    let mut y = DVector::zeros(q);
    for i in 0..r {
        let bj = tab.basis[i];
        if bj < q {
            y[bj] = tab.t[idx(i, rhs_col)].max(0.0);
        }
    }
    let mut multipliers = DVector::zeros(r);
    for k in 0..r {
        multipliers[k] = -tab.t[idx(r, q + k)] * sign[k];
    }
    let mut basic: Vec<usize> = tab.basis.iter().copied().filter(|&j| j < q).collect();
    basic.sort_unstable();
    let value = g.dot(&y);
    Ok(StdOutcome::Optimal { y, multipliers, basis: basic, value })
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Tableau<'a> {
    t: Vec<f64>,
    width: usize,
    rows: usize,
    basis: &'a mut Vec<usize>,
}

impl Tableau<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.t[row * w + col];
        for j in 0..w {
            self.t[row * w + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(row * w);
        let (prow, after) = rest.split_at_mut(w);
        for chunk in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = chunk[col];
            if f != 0.0 {
                for j in 0..w {
                    chunk[j] -= f * prow[j];
                }
                chunk[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex pivots allowing only columns `< allowed` to enter.
    /// With `bounded` set (phase 1) an improving column without a positive
    /// pivot can only be round-off, so it is skipped instead of reported.
    fn run(&mut self, allowed: usize, cap: usize, bounded: bool) -> NumResult<PhaseEnd> {
        let r = self.rows;
        let rhs = self.width - 1;
        let mut skipped = vec![false; allowed];
        let mut bland = false;
        let mut degenerate_run = 0usize;
        for _ in 0..cap {
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..allowed {
                if skipped[j] {
                    continue;
                }
                let rc = self.at(r, j);
                if bland {
                    if rc < -COST_TOL {
                        enter = Some(j);
                        break;
                    }
                } else if rc < best {
                    best = rc;
                    enter = Some(j);
                }
            }
            let Some(col) = enter else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..r {
                let a = self.at(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                if bounded {
                    skipped[col] = true;
                    continue;
                }
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
                if degenerate_run > 20 * (r + 1) {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
            skipped.iter_mut().for_each(|s| *s = false);
        }
        Err(NumError::IterationLimit(cap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn one_dimensional_bound() {
        let a = dmatrix![1.0; -1.0];
        let b = dvector![3.0, 0.0];
        let sol = solve_lp(&dvector![1.0], &a, &b).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
        assert!((sol.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_box_corner() {
        let a = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        let b = dvector![1.0, 1.0, 1.0, 1.0];
        let sol = solve_lp(&dvector![1.0, 1.0], &a, &b).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let a = dmatrix![1.0; -1.0];
        let b = dvector![-1.0, -1.0];
        assert_eq!(solve_lp(&dvector![1.0], &a, &b), Err(NumError::Infeasible));
        let a = dmatrix![-1.0];
        let b = dvector![0.0];
        assert_eq!(solve_lp(&dvector![1.0], &a, &b), Err(NumError::Unbounded));
    }

    #[test]
    fn zero_objective_on_feasible_set() {
        let a = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        let b = dvector![1.0, 1.0, 1.0, 1.0];
        let sol = solve_lp(&dvector![0.0, 0.0], &a, &b).unwrap();
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn degenerate_redundant_rows() {
        // the same facet listed three times plus a degenerate vertex
        let a = dmatrix![1.0, 0.0; 1.0, 0.0; 1.0, 0.0; 0.0, 1.0; -1.0, -1.0; 1.0, 1.0];
        let b = dvector![1.0, 1.0, 1.0, 1.0, 0.0, 2.0];
        let sol = solve_lp(&dvector![2.0, 1.0], &a, &b).unwrap();
        assert!((sol.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn feasible_point_segment() {
        // x = 1 written as two inequalities, y in [0, 2]
        let a = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        let b = dvector![1.0, -1.0, 2.0, 0.0];
        let x = find_feasible_point(&a, &b).unwrap().unwrap();
        assert!((&a * &x - &b).max() <= 1e-12);
        let b2 = dvector![1.0, -1.5, 2.0, 0.0];
        assert!(find_feasible_point(&a, &b2).unwrap().is_none());
    }

    #[test]
    fn deterministic_repeat() {
        let a = dmatrix![1.0, 2.0; -3.0, 1.0; 0.5, -1.0; -1.0, -1.0; 2.0, 0.1];
        let b = dvector![4.0, 3.0, 2.0, 1.0, 5.0];
        let c = dvector![0.3, 0.7];
        let s1 = solve_lp(&c, &a, &b).unwrap();
        let s2 = solve_lp(&c, &a, &b).unwrap();
        assert_eq!(s1.x.as_slice(), s2.x.as_slice());
    }
}
