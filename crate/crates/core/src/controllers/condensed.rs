//! Condensed finite-horizon problems: states are eliminated through the
//! dynamics, leaving the optional initial state and the input sequence as
//! decision variables.

use nalgebra::{DMatrix, DVector};

use crate::geometry::HPolytope;
use crate::numkernel::{solve_qp, NumResult, QpProblem};

pub(crate) struct Condensed<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    x0: Option<DVector<f64>>,
    offsets: Vec<DVector<f64>>,
    nx: usize,
    nu: usize,
    horizon: usize,
    nz: usize,
    /// `x_k = sx[k] z + cx[k]`
    sx: Vec<DMatrix<f64>>,
    cx: Vec<DVector<f64>>,
    rows: Vec<(DVector<f64>, f64)>,
    h: DMatrix<f64>,
    f: DVector<f64>,
}

impl<'a> Condensed<'a> {
    /// `x_{k+1} = A x_k + B u_k + d_k`. `x0 = None` makes the initial state a
    /// decision variable; `offsets` defaults to zero.
    pub fn new(
        a: &'a DMatrix<f64>,
        b: &'a DMatrix<f64>,
        horizon: usize,
        x0: Option<&DVector<f64>>,
        offsets: Option<&[DVector<f64>]>,
    ) -> Self {
        let (nx, nu) = (a.nrows(), b.ncols());
        let free = if x0.is_some() { 0 } else { nx };
        let nz = free + nu * horizon;
        let offsets: Vec<DVector<f64>> = match offsets {
            Some(d) => d.to_vec(),
            None => vec![DVector::zeros(nx); horizon],
        };
        let mut s0 = DMatrix::zeros(nx, nz);
        if x0.is_none() {
            s0.view_mut((0, 0), (nx, nx)).fill_with_identity();
        }
        let mut sx = vec![s0];
        let mut cx = vec![x0.cloned().unwrap_or_else(|| DVector::zeros(nx))];
        for k in 0..horizon {
            let mut next = a * &sx[k];
            let mut cols = next.view_mut((0, free + k * nu), (nx, nu));
            cols += b;
            sx.push(next);
            cx.push(a * &cx[k] + &offsets[k]);
        }
        Self {
            a,
            b,
            x0: x0.cloned(),
            offsets,
            nx,
            nu,
            horizon,
            nz,
            sx,
            cx,
            rows: Vec::new(),
            h: DMatrix::zeros(nz, nz),
            f: DVector::zeros(nz),
        }
    }

    fn input_col(&self, k: usize) -> usize {
        (if self.x0.is_some() { 0 } else { self.nx }) + k * self.nu
    }

    /// Rows `C (x_k[off..] − reference) ∈ set`.
    pub fn state_in(&mut self, k: usize, off: usize, set: &HPolytope, reference: Option<&DVector<f64>>) {
        let d = set.dim();
        let s = self.sx[k].rows(off, d).into_owned();
        let mut c = self.cx[k].rows(off, d).into_owned();
        if let Some(r) = reference {
            c -= r;
        }
        for i in 0..set.num_rows() {
            let a = set.a().row(i);
            self.rows.push(((a * &s).transpose(), set.b()[i] - (a * &c)[0]));
        }
    }

    /// Rows `x_meas − x_0 ∈ set`.
    pub fn initial_error_in(&mut self, measured: &DVector<f64>, set: &HPolytope) {
        let s = &self.sx[0];
        let c = measured - &self.cx[0];
        for i in 0..set.num_rows() {
            let a = set.a().row(i);
            self.rows.push((-(a * s).transpose(), set.b()[i] - (a * &c)[0]));
        }
    }

    pub fn input_in(&mut self, k: usize, off: usize, set: &HPolytope) {
        let col = self.input_col(k) + off;
        for i in 0..set.num_rows() {
            let mut row = DVector::zeros(self.nz);
            row.rows_mut(col, set.dim()).copy_from(&set.a().row(i).transpose());
            self.rows.push((row, set.b()[i]));
        }
    }

    /// Adds `Σ_k ‖x_k‖²_Q + ‖u_k‖²_R + ‖x_N‖²_P` to the objective.
    pub fn quadratic_cost(&mut self, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) {
        for k in 0..=self.horizon {
            let w = if k == self.horizon { p } else { q };
            let s = &self.sx[k];
            let ws = w * s;
            self.h += 2.0 * s.transpose() * &ws;
            self.f += 2.0 * ws.transpose() * &self.cx[k];
        }
        for k in 0..self.horizon {
            let col = self.input_col(k);
            let mut block = self.h.view_mut((col, col), (self.nu, self.nu));
            block += 2.0 * r;
        }
        self.h = (&self.h + self.h.transpose()) * 0.5;
    }

    /// Solves and rolls the dynamics out from the optimum.
    pub fn solve(self) -> NumResult<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let m = self.rows.len();
        let mut a_in = DMatrix::zeros(m, self.nz);
        let mut b_in = DVector::zeros(m);
        for (i, (r, v)) in self.rows.iter().enumerate() {
            a_in.set_row(i, &r.transpose());
            b_in[i] = *v;
        }
        let qp = QpProblem::inequality(self.h.clone(), self.f.clone(), a_in, b_in)?;
        let z = solve_qp(&qp)?.x;
        Ok(self.rollout(&z))
    }

    fn rollout(&self, z: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let x0 = match &self.x0 {
            Some(x) => x.clone(),
            None => z.rows(0, self.nx).into_owned(),
        };
        let inputs: Vec<DVector<f64>> = (0..self.horizon).map(|k| z.rows(self.input_col(k), self.nu).into_owned()).collect();
        let states = rollout(self.a, self.b, x0, &inputs, Some(&self.offsets));
        (states, inputs)
    }
}

/// States of `x_{k+1} = A x_k + B u_k + d_k` from `x0`.
pub(crate) fn rollout(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: DVector<f64>,
    inputs: &[DVector<f64>],
    offsets: Option<&[DVector<f64>]>,
) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0);
    for (k, u) in inputs.iter().enumerate() {
        let mut next = a * &states[k] + b * u;
        if let Some(d) = offsets {
            next += &d[k];
        }
        states.push(next);
    }
    states
}
