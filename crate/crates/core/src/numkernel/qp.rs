use nalgebra::{DMatrix, DVector};

use super::lp::find_feasible_point;
use super::{NumError, NumResult};

/// Strictly convex quadratic program
/// `min ½ xᵀH x + fᵀx  s.t.  A_in x ≤ b_in,  A_eq x = b_eq`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    h: DMatrix<f64>,
    f: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Multipliers of the inequality rows (zero for inactive rows).
    pub lambda_in: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    /// Inequality rows in the final working set.
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpProblem {
    /// Assembles a problem and checks its invariants: symmetric `H`
    /// (within 1e-12 relative) that is positive definite on the null space
    /// of `A_eq`, and mutually consistent dimensions.
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> NumResult<Self> {
        let n = f.len();
        let dims_ok = h.shape() == (n, n)
            && a_in.ncols() == n
            && a_in.nrows() == b_in.len()
            && a_eq.ncols() == n
            && a_eq.nrows() == b_eq.len();
        if !dims_ok {
            return Err(NumError::DimensionMismatch(format!(
                "H {:?}, f {}, A_in {:?}, b_in {}, A_eq {:?}, b_eq {}",
                h.shape(),
                n,
                a_in.shape(),
                b_in.len(),
                a_eq.shape(),
                b_eq.len()
            )));
        }
        let all = h.iter().chain(f.iter()).chain(a_in.iter()).chain(b_in.iter()).chain(a_eq.iter()).chain(b_eq.iter());
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(NumError::InvalidProblem("non-finite data".into()));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * (1.0 + h.amax()) {
            return Err(NumError::InvalidProblem(format!("H is not symmetric (defect {asym:.3e})")));
        }
        let reduced = match null_space(&a_eq) {
            Some(z) => z.transpose() * &h * &z,
            None => h.clone(),
        };
        if reduced.nrows() > 0 && reduced.clone().cholesky().is_none() {
            return Err(NumError::InvalidProblem("H is not positive definite on the feasible subspace".into()));
        }
        Ok(Self { h, f, a_in, b_in, a_eq, b_eq })
    }

    /// Inequality-only convenience constructor.
    pub fn inequality(h: DMatrix<f64>, f: DVector<f64>, a_in: DMatrix<f64>, b_in: DVector<f64>) -> NumResult<Self> {
        let n = f.len();
        Self::new(h, f, a_in, b_in, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn a_in(&self) -> &DMatrix<f64> {
        &self.a_in
    }

    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Largest KKT defect of a candidate primal-dual point: stationarity,
    /// primal feasibility and complementary slackness.
    pub fn kkt_residual(&self, sol: &QpSolution) -> (f64, f64, f64) {
        let grad = &self.h * &sol.x + &self.f + self.a_in.transpose() * &sol.lambda_in + self.a_eq.transpose() * &sol.lambda_eq;
        let stationarity = grad.amax();
        let slack = &self.a_in * &sol.x - &self.b_in;
        let mut primal: f64 = if slack.is_empty() { 0.0 } else { slack.max().max(0.0) };
        if self.b_eq.len() > 0 {
            primal = primal.max((&self.a_eq * &sol.x - &self.b_eq).amax());
        }
        let mut comp: f64 = 0.0;
        for i in 0..slack.len() {
            comp = comp.max((sol.lambda_in[i] * slack[i]).abs());
            comp = comp.max((-sol.lambda_in[i]).max(0.0));
        }
        (stationarity, primal, comp)
    }
}

fn null_space(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (m, n) = a.shape();
    if m == 0 {
        return None;
    }
    // eigen-decomposition of AᵀA; eigenvectors with tiny eigenvalues span the null space
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] <= 1e-12 * scale).collect();
    let mut z = DMatrix::zeros(n, cols.len());
    for (c, &k) in cols.iter().enumerate() {
        z.set_column(c, &eig.eigenvectors.column(k));
    }
    Some(z)
}

/// Dual active-set solver (Goldfarb-Idnani).
///
/// Starts from the unconstrained minimizer and adds the most violated row,
/// normalized by its norm, until none is violated. A row that is linearly
/// dependent on the active set is admitted only after the dual step has
/// dropped a row, so the active normals stay independent. A claim of
/// infeasibility is confirmed by a phase-1 LP, which is the authoritative
/// signal.
pub fn solve_qp(p: &QpProblem) -> NumResult<QpSolution> {
    let n = p.dim();
    let m_in = p.a_in.nrows();
    let m_eq = p.a_eq.nrows();
    let scale = 1.0 + p.b_in.amax().max(if m_eq > 0 { p.b_eq.amax() } else { 0.0 });

    // H may only be definite on the equality null space; the penalty
    // ρ‖A_eq x − b_eq‖² vanishes on the feasible set
    let (mut h, mut f) = (p.h.clone(), p.f.clone());
    let mut chol = h.clone().cholesky();
    if chol.is_none() && m_eq > 0 {
        let rho = 1.0 + h.amax();
        h += 2.0 * rho * p.a_eq.transpose() * &p.a_eq;
        f -= 2.0 * rho * p.a_eq.transpose() * &p.b_eq;
        chol = h.clone().cholesky();
    }
    let hinv = chol.ok_or_else(|| NumError::NumericalFailure("Cholesky factorization of H failed".into()))?.inverse();

    let mut dual = Dual { n, hinv: &hinv, x: -&hinv * &f, active: Vec::new(), normals: Vec::new(), u: Vec::new(), iterations: 0 };
    let cap = 10 * (m_in + m_eq + n) + 100;

    for k in 0..m_eq {
        let row = p.a_eq.row(k).transpose();
        let sign = if row.dot(&dual.x) - p.b_eq[k] > 0.0 { -1.0 } else { 1.0 };
        match dual.add(Row::Eq(k), sign * row, sign * p.b_eq[k], cap)? {
            Added::Yes => {}
            Added::Dependent => return Err(NumError::InvalidProblem("equality rows are linearly dependent".into())),
            Added::Infeasible => return confirm_infeasible(p),
        }
    }

    let norms: Vec<f64> = (0..m_in).map(|i| p.a_in.row(i).norm()).collect();
    let tol = 1e-11 * scale;
    loop {
        let slack = &p.b_in - &p.a_in * &dual.x;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m_in {
            if norms[i] == 0.0 || dual.active.contains(&Row::In(i)) {
                continue;
            }
            let v = slack[i] / norms[i];
            if v < -tol && worst.map_or(true, |(_, w)| v < w) {
                worst = Some((i, v));
            }
        }
        let Some((i, _)) = worst else { break };
        match dual.add(Row::In(i), -p.a_in.row(i).transpose(), -p.b_in[i], cap)? {
            Added::Yes => {}
            Added::Dependent | Added::Infeasible => return confirm_infeasible(p),
        }
    }

    let mut lambda_in = DVector::zeros(m_in);
    let mut lambda_eq = DVector::zeros(m_eq);
    let mut active = Vec::new();
    for (j, row) in dual.active.iter().enumerate() {
        match *row {
            Row::In(i) => {
                lambda_in[i] = dual.u[j].max(0.0);
                active.push(i);
            }
            Row::Eq(k) => lambda_eq[k] = -dual.u[j] * dual.normals[j].dot(&p.a_eq.row(k).transpose()).signum(),
        }
    }
    active.sort_unstable();
    let x = dual.x;
    let value = p.objective(&x);
    let sol = QpSolution { x, value, lambda_in, lambda_eq, active, iterations: dual.iterations };
    let (st, pr, co) = p.kkt_residual(&sol);
    let kkt_scale = 1.0 + p.h.amax() * sol.x.amax() + p.f.amax();
    if st > 1e-8 * kkt_scale || pr > 1e-8 * scale || co > 1e-8 * kkt_scale * scale {
        return Err(NumError::NumericalFailure(format!(
            "KKT residuals stationarity {st:.2e}, primal {pr:.2e}, complementarity {co:.2e}"
        )));
    }
    Ok(sol)
}

fn confirm_infeasible(p: &QpProblem) -> NumResult<QpSolution> {
    let (n, m_in, m_eq) = (p.dim(), p.a_in.nrows(), p.a_eq.nrows());
    let mut a_all = DMatrix::zeros(m_in + 2 * m_eq, n);
    let mut b_all = DVector::zeros(m_in + 2 * m_eq);
    a_all.rows_mut(0, m_in).copy_from(&p.a_in);
    b_all.rows_mut(0, m_in).copy_from(&p.b_in);
    for k in 0..m_eq {
        a_all.set_row(m_in + 2 * k, &p.a_eq.row(k));
        b_all[m_in + 2 * k] = p.b_eq[k];
        a_all.set_row(m_in + 2 * k + 1, &(-p.a_eq.row(k)));
        b_all[m_in + 2 * k + 1] = -p.b_eq[k];
    }
    match find_feasible_point(&a_all, &b_all)? {
        None => Err(NumError::Infeasible),
        Some(_) => Err(NumError::NumericalFailure("dual active set stalled on a feasible problem".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    In(usize),
    Eq(usize),
}

enum Added {
    Yes,
    Dependent,
    Infeasible,
}

/// Active set in the form `nᵀx ≥ c` with multipliers `u`.
struct Dual<'a> {
    n: usize,
    hinv: &'a DMatrix<f64>,
    x: DVector<f64>,
    active: Vec<Row>,
    normals: Vec<DVector<f64>>,
    u: Vec<f64>,
    iterations: usize,
}

impl Dual<'_> {
    fn add(&mut self, row: Row, np: DVector<f64>, c: f64, cap: usize) -> NumResult<Added> {
        let hn = self.hinv * &np;
        let nhn = np.dot(&hn);
        let mut up = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > cap {
                return Err(NumError::NumericalFailure(format!("dual active-set iteration cap {cap} reached")));
            }
            let q = self.active.len();
            let mut nmat = DMatrix::zeros(self.n, q);
            for (j, v) in self.normals.iter().enumerate() {
                nmat.set_column(j, v);
            }
            let hin = self.hinv * &nmat;
            let r = if q == 0 {
                DVector::zeros(0)
            } else {
                let m = nmat.transpose() * &hin;
                let rhs = nmat.transpose() * &hn;
                match m.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => m.full_piv_lu().solve(&rhs).ok_or_else(|| NumError::NumericalFailure("singular active set".into()))?,
                }
            };
            let z = &hn - &hin * &r;
            let zn = z.dot(&np);

            // partial step: largest dual move keeping droppable multipliers ≥ 0
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            let rmax = r.amax();
            for j in 0..q {
                if matches!(self.active[j], Row::In(_)) && r[j] > 1e-14 * (1.0 + rmax) {
                    let t = self.u[j].max(0.0) / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let s = np.dot(&self.x) - c;
            let t2 = if zn > 1e-10 * nhn { (-s).max(0.0) / zn } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                return Ok(if s.abs() <= 1e-12 * (1.0 + c.abs()) { Added::Dependent } else { Added::Infeasible });
            }
            let t = t1.min(t2);
            for j in 0..q {
                self.u[j] -= t * r[j];
            }
            up += t;
            if t2.is_finite() {
                self.x += t * &z;
            }
            if t2 <= t1 {
                self.active.push(row);
                self.normals.push(np);
                self.u.push(up);
                return Ok(Added::Yes);
            }
            let j = drop.expect("finite partial step has a blocking row");
            self.active.remove(j);
            self.normals.remove(j);
            self.u.remove(j);
        }
    }
}
