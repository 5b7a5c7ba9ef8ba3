//! Online problems of the two-layer scheme: the decentralized inner tube MPC
//! that produces broadcast references, the distributed outer tube MPC that
//! refines them, the applied control law, and the three comparison
//! controllers.

mod baselines;
mod condensed;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{minkowski_sum, GeomError, HPolytope};
use crate::model::CoupledSystem;
use crate::numkernel::{find_feasible_point, NumError};
use crate::synthesis::{SubsystemDesign, TubeDesign};

pub use baselines::{DempcOutcome, GLOBAL_OWNER};
use condensed::Condensed;

/// Tolerance of the post-solve audits.
pub const AUDIT_TOL: f64 = 1e-8;
/// Default prediction horizon.
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Inner,
    Outer,
    Cmpc,
    Tmpc,
    Dempc,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Inner => "inner",
            Stage::Outer => "outer",
            Stage::Cmpc => "CMPC",
            Stage::Tmpc => "TMPC",
            Stage::Dempc => "DeMPC",
        })
    }
}

/// Initial constraint of the inner problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialConstraint {
    /// `x − x̂_{t/t} ∈ S ⊕ H`.
    #[default]
    Nested,
    /// `x − x̂_{t/t} ∈ Z`, the plain tube form.
    Tube,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("{stage} problem of subsystem {} is infeasible at t = {t}", subsystem + 1)]
    Infeasible { stage: Stage, subsystem: usize, t: usize },
    #[error(
        "outer QP of subsystem {} reported infeasible at t = {t} although the reference candidate passes (violation {violation:e})",
        subsystem + 1
    )]
    CandidateRejected { subsystem: usize, t: usize, violation: f64 },
    #[error("missing broadcast from subsystem {} to subsystem {}", neighbor + 1, subsystem + 1)]
    MissingBroadcast { subsystem: usize, neighbor: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("audit of the {stage} solution of subsystem {} failed: {detail}", subsystem + 1)]
    AuditFailed { stage: Stage, subsystem: usize, detail: String },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Numerical(#[from] NumError),
}

pub type ControlResult<T> = Result<T, ControlError>;

/// Nominal state and input sequences over one horizon, `states[k]` being the
/// prediction for time `stamp + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub owner: usize,
    pub stamp: usize,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl NominalTrajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// All-zero trajectory.
    pub fn zero(owner: usize, stamp: usize, nx: usize, nu: usize, horizon: usize) -> Self {
        Self {
            owner,
            stamp,
            states: vec![DVector::zeros(nx); horizon + 1],
            inputs: vec![DVector::zeros(nu); horizon],
        }
    }

    /// Largest deviation from `x_{k+1} = A x_k + B u_k + d_k`.
    pub fn dynamics_residual(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, offsets: Option<&[DVector<f64>]>) -> f64 {
        if self.states.len() != self.inputs.len() + 1 {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for k in 0..self.inputs.len() {
            let mut next = a * &self.states[k] + b * &self.inputs[k];
            if let Some(d) = offsets {
                next += &d[k];
            }
            worst = worst.max((next - &self.states[k + 1]).amax());
        }
        worst
    }
}

/// Known part of the coupling along the horizon, from the neighbours'
/// broadcast inner references.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbancePreview {
    pub owner: usize,
    pub stamp: usize,
    pub d_seq: Vec<DVector<f64>>,
}

/// `u = û̂_{t/t} + K̂ (x − x̂̂_{t/t})`.
pub fn control_action(x: &DVector<f64>, outer: &NominalTrajectory, design: &SubsystemDesign) -> DVector<f64> {
    &outer.inputs[0] + &design.k_hat * (x - &outer.states[0])
}

/// `‖x‖²_Q + ‖u‖²_R`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    (x.transpose() * q * x)[0] + (u.transpose() * r * u)[0]
}

/// `Σ_k (‖x_k‖²_Q + ‖u_k‖²_R) + ‖x_N‖²_P` with `N = inputs.len()`; without
/// `P` only the stage costs are summed.
pub fn evaluate_cost(
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: Option<&DMatrix<f64>>,
) -> ControlResult<f64> {
    let n = inputs.len();
    let need = if p.is_some() { n + 1 } else { n };
    if states.len() < need {
        return Err(ControlError::SizeMismatch(format!("{} states for {n} inputs", states.len())));
    }
    let bad_x = states.iter().any(|x| x.len() != q.nrows()) || q.nrows() != q.ncols();
    let bad_u = inputs.iter().any(|u| u.len() != r.nrows()) || r.nrows() != r.ncols();
    if bad_x || bad_u || p.is_some_and(|p| p.shape() != q.shape()) {
        return Err(ControlError::SizeMismatch("weights do not match the trajectory".into()));
    }
    let mut total = 0.0;
    for k in 0..n {
        total += stage_cost(&states[k], &inputs[k], q, r);
    }
    if let Some(p) = p {
        let x = &states[n];
        total += (x.transpose() * p * x)[0];
    }
    Ok(total)
}

/// Per-subsystem data shared by all online problems.
struct Local {
    nested: HPolytope,
    dempc_terminal: HPolytope,
}

/// Online problems for one validated design.
pub struct Controllers<'a> {
    pub sys: &'a CoupledSystem,
    pub design: &'a TubeDesign,
    pub horizon: usize,
    pub initial: InitialConstraint,
    local: Vec<Local>,
}

impl<'a> Controllers<'a> {
    pub fn new(sys: &'a CoupledSystem, design: &'a TubeDesign, horizon: usize, initial: InitialConstraint) -> ControlResult<Self> {
        if horizon == 0 {
            return Err(ControlError::SizeMismatch("horizon must be at least 1".into()));
        }
        if design.len() != sys.len()
            || sys.subsystems.iter().zip(&design.subsystems).any(|(s, d)| s.nx() != d.nx() || s.nu() != d.nu())
        {
            return Err(ControlError::SizeMismatch("design does not match the plant".into()));
        }
        let mut local = Vec::with_capacity(sys.len());
        for (s, d) in sys.subsystems.iter().zip(&design.subsystems) {
            local.push(Local {
                nested: minkowski_sum(&d.s, &d.h)?.canonicalize()?,
                dempc_terminal: baselines::dempc_terminal_set(s, d)?,
            });
        }
        Ok(Self { sys, design, horizon, initial, local })
    }

    fn initial_set(&self, i: usize, initial: InitialConstraint) -> &HPolytope {
        match initial {
            InitialConstraint::Nested => &self.local[i].nested,
            InitialConstraint::Tube => &self.design.subsystems[i].z,
        }
    }

    fn check_state(&self, i: usize, x: &DVector<f64>) -> ControlResult<()> {
        let nx = self.sys.subsystems.get(i).map(|s| s.nx());
        if nx != Some(x.len()) {
            return Err(ControlError::SizeMismatch(format!("state of length {} for subsystem {}", x.len(), i + 1)));
        }
        Ok(())
    }

    /// Inner problem: free initial nominal state tied to the measurement by
    /// the configured initial set, tightened sets `X̂`, `Û`, terminal `X̂^F`.
    pub fn solve_inner(&self, i: usize, x: &DVector<f64>, t: usize) -> ControlResult<NominalTrajectory> {
        self.solve_inner_with(i, x, t, self.initial, Stage::Inner)
    }

    pub(crate) fn solve_inner_with(
        &self,
        i: usize,
        x: &DVector<f64>,
        t: usize,
        initial: InitialConstraint,
        stage: Stage,
    ) -> ControlResult<NominalTrajectory> {
        self.check_state(i, x)?;
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        let init = self.initial_set(i, initial);
        let mut c = Condensed::new(&s.a, &s.b, self.horizon, None, None);
        c.initial_error_in(x, init);
        for k in 0..self.horizon {
            c.state_in(k, 0, &d.x_hat, None);
            c.input_in(k, 0, &d.u_hat);
        }
        c.state_in(self.horizon, 0, &d.xf_hat, None);
        c.quadratic_cost(&d.q, &d.r, &d.p);
        let (states, inputs) = solved(c.solve(), stage, i, t)?;
        let traj = NominalTrajectory { owner: i, stamp: t, states, inputs };
        let v = self.inner_violation(i, x, &traj, initial)?;
        if v > AUDIT_TOL {
            return Err(ControlError::AuditFailed { stage, subsystem: i, detail: format!("constraint violation {v:e}") });
        }
        Ok(traj)
    }

    /// Largest violation of the inner constraints and dynamics by `traj`.
    pub fn inner_violation(
        &self,
        i: usize,
        x: &DVector<f64>,
        traj: &NominalTrajectory,
        initial: InitialConstraint,
    ) -> ControlResult<f64> {
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        if traj.horizon() != self.horizon || traj.states.len() != self.horizon + 1 {
            return Err(ControlError::SizeMismatch(format!("trajectory of horizon {} for N = {}", traj.horizon(), self.horizon)));
        }
        let mut v = traj.dynamics_residual(&s.a, &s.b, None);
        v = v.max(self.initial_set(i, initial).violation(&(x - &traj.states[0])));
        for k in 0..self.horizon {
            v = v.max(d.x_hat.violation(&traj.states[k])).max(d.u_hat.violation(&traj.inputs[k]));
        }
        Ok(v.max(d.xf_hat.violation(&traj.states[self.horizon])))
    }

    /// Reference update without a solve: drop the first step and append the
    /// terminal feedback `K_T x̂_N`.
    pub fn shift_inner(&self, prev: &NominalTrajectory) -> ControlResult<NominalTrajectory> {
        let i = prev.owner;
        let (s, d) = (
            self.sys.subsystems.get(i).ok_or_else(|| ControlError::SizeMismatch(format!("no subsystem {}", i + 1)))?,
            &self.design.subsystems[i],
        );
        if prev.states.len() != prev.inputs.len() + 1 || prev.inputs.is_empty() {
            return Err(ControlError::SizeMismatch("trajectory lengths are inconsistent".into()));
        }
        let last = &prev.states[prev.states.len() - 1];
        let out = d.xf_hat.violation(last);
        if out > AUDIT_TOL {
            return Err(ControlError::InvariantViolation(format!(
                "terminal state of subsystem {} is outside X̂^F by {out:e}",
                i + 1
            )));
        }
        let u = &d.k_t * last;
        let next = &s.a * last + &s.b * &u;
        let mut states = prev.states[1..].to_vec();
        states.push(next);
        let mut inputs = prev.inputs[1..].to_vec();
        inputs.push(u);
        Ok(NominalTrajectory { owner: i, stamp: prev.stamp + 1, states, inputs })
    }

    /// `d_k = Σ_{j ∈ N_i} (A_ij x̂^j_k + B_ij û^j_k)` from the neighbours'
    /// broadcasts, summed in neighbour order.
    pub fn preview_disturbance(
        &self,
        i: usize,
        broadcasts: &BTreeMap<usize, &NominalTrajectory>,
    ) -> ControlResult<DisturbancePreview> {
        let s = self.sys.subsystems.get(i).ok_or_else(|| ControlError::SizeMismatch(format!("no subsystem {}", i + 1)))?;
        let mut d_seq = vec![DVector::zeros(s.nx()); self.horizon];
        let mut stamp = None;
        for (j, c) in &s.couplings {
            let r = broadcasts.get(j).ok_or(ControlError::MissingBroadcast { subsystem: i, neighbor: *j })?;
            if r.horizon() != self.horizon {
                return Err(ControlError::SizeMismatch(format!("broadcast of subsystem {} has horizon {}", j + 1, r.horizon())));
            }
            if *stamp.get_or_insert(r.stamp) != r.stamp {
                return Err(ControlError::InvariantViolation(format!("broadcasts to subsystem {} carry different stamps", i + 1)));
            }
            for (k, dk) in d_seq.iter_mut().enumerate() {
                *dk += &c.a * &r.states[k];
                *dk += &c.b * &r.inputs[k];
            }
        }
        let stamp = stamp.unwrap_or_else(|| broadcasts.values().next().map_or(0, |r| r.stamp));
        Ok(DisturbancePreview { owner: i, stamp, d_seq })
    }

    /// Outer problem: dynamics driven by the preview, `x − x̂̂_{t/t} ∈ S`,
    /// tightened sets `X̂̂`, `Û̂`, terminal `X̂̂^F` and the BRF constraint
    /// `x̂̂_k − x̂_k ∈ H` for `k = 0..N`.
    ///
    /// An infeasible QP is cross-checked against the reference candidate; if
    /// that candidate satisfies every constraint the solver is at fault and
    /// [`ControlError::CandidateRejected`] is returned.
    pub fn solve_outer(
        &self,
        i: usize,
        x: &DVector<f64>,
        own_ref: &NominalTrajectory,
        preview: &DisturbancePreview,
        t: usize,
    ) -> ControlResult<NominalTrajectory> {
        self.check_state(i, x)?;
        self.check_outer_inputs(i, own_ref, preview)?;
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        let mut c = Condensed::new(&s.a, &s.b, self.horizon, None, Some(&preview.d_seq));
        c.initial_error_in(x, &d.s);
        for k in 0..self.horizon {
            c.state_in(k, 0, &d.x_hathat, None);
            c.input_in(k, 0, &d.u_hathat);
        }
        c.state_in(self.horizon, 0, &d.xf_hathat, None);
        for k in 0..=self.horizon {
            c.state_in(k, 0, &d.h, Some(&own_ref.states[k]));
        }
        c.quadratic_cost(&d.q, &d.r, &d.p);
        let (states, inputs) = match c.solve() {
            Ok(r) => r,
            Err(NumError::Infeasible) => {
                if let Some(cand) = self.theorem3_candidate(i, x, own_ref, preview)? {
                    let v = self.outer_violation(i, x, own_ref, preview, &cand)?;
                    if v <= AUDIT_TOL {
                        return Err(ControlError::CandidateRejected { subsystem: i, t, violation: v });
                    }
                }
                return Err(ControlError::Infeasible { stage: Stage::Outer, subsystem: i, t });
            }
            Err(e) => return Err(e.into()),
        };
        let traj = NominalTrajectory { owner: i, stamp: t, states, inputs };
        let v = self.outer_violation(i, x, own_ref, preview, &traj)?;
        if v > AUDIT_TOL {
            return Err(ControlError::AuditFailed { stage: Stage::Outer, subsystem: i, detail: format!("constraint violation {v:e}") });
        }
        Ok(traj)
    }

    fn check_outer_inputs(&self, i: usize, own_ref: &NominalTrajectory, preview: &DisturbancePreview) -> ControlResult<()> {
        if own_ref.owner != i || preview.owner != i {
            return Err(ControlError::SizeMismatch(format!("reference or preview of another subsystem passed to {}", i + 1)));
        }
        if own_ref.horizon() != self.horizon || own_ref.states.len() != self.horizon + 1 || preview.d_seq.len() != self.horizon {
            return Err(ControlError::SizeMismatch(format!("reference or preview length differs from N = {}", self.horizon)));
        }
        Ok(())
    }

    /// Largest violation of the outer constraints (dynamics with the preview,
    /// initial set, tightened and terminal sets, BRF) by `traj`.
    pub fn outer_violation(
        &self,
        i: usize,
        x: &DVector<f64>,
        own_ref: &NominalTrajectory,
        preview: &DisturbancePreview,
        traj: &NominalTrajectory,
    ) -> ControlResult<f64> {
        self.check_outer_inputs(i, own_ref, preview)?;
        if traj.horizon() != self.horizon || traj.states.len() != self.horizon + 1 {
            return Err(ControlError::SizeMismatch(format!("trajectory of horizon {} for N = {}", traj.horizon(), self.horizon)));
        }
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        let mut v = traj.dynamics_residual(&s.a, &s.b, Some(&preview.d_seq));
        v = v.max(d.s.violation(&(x - &traj.states[0])));
        for k in 0..self.horizon {
            v = v.max(d.x_hathat.violation(&traj.states[k])).max(d.u_hathat.violation(&traj.inputs[k]));
        }
        v = v.max(d.xf_hathat.violation(&traj.states[self.horizon]));
        for k in 0..=self.horizon {
            v = v.max(d.h.violation(&(&traj.states[k] - &own_ref.states[k])));
        }
        Ok(v)
    }

    /// The reference-tracking candidate `û̂_k = û_k + K̂ (x̂̂_k − x̂_k)` rolled
    /// out with the preview from an `x̂̂_{t/t}` that splits `x − x̂_{t/t}` into
    /// a part in `S` and a part in `H`. `None` when no such split exists.
    pub fn theorem3_candidate(
        &self,
        i: usize,
        x: &DVector<f64>,
        own_ref: &NominalTrajectory,
        preview: &DisturbancePreview,
    ) -> ControlResult<Option<NominalTrajectory>> {
        self.check_state(i, x)?;
        self.check_outer_inputs(i, own_ref, preview)?;
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        // h ∈ H and x − x̂_0 − h ∈ S
        let err = x - &own_ref.states[0];
        let (rh, rs) = (d.h.num_rows(), d.s.num_rows());
        let n = s.nx();
        let mut a = DMatrix::zeros(rh + rs, n);
        let mut b = DVector::zeros(rh + rs);
        a.rows_mut(0, rh).copy_from(d.h.a());
        b.rows_mut(0, rh).copy_from(d.h.b());
        a.rows_mut(rh, rs).copy_from(&(-d.s.a()));
        b.rows_mut(rh, rs).copy_from(&(d.s.b() - d.s.a() * &err));
        let Some(h) = find_feasible_point(&a, &b)? else {
            return Ok(None);
        };
        let mut states = vec![&own_ref.states[0] + h];
        let mut inputs = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            let u = &own_ref.inputs[k] + &d.k_hat * (&states[k] - &own_ref.states[k]);
            states.push(&s.a * &states[k] + &s.b * &u + &preview.d_seq[k]);
            inputs.push(u);
        }
        Ok(Some(NominalTrajectory { owner: i, stamp: own_ref.stamp, states, inputs }))
    }

    /// Cost of a trajectory under the design's `Q`, `R`, `P`.
    pub fn trajectory_cost(&self, traj: &NominalTrajectory) -> ControlResult<f64> {
        let d = &self.design.subsystems[traj.owner];
        evaluate_cost(&traj.states, &traj.inputs, &d.q, &d.r, Some(&d.p))
    }
}

fn solved<T>(r: Result<T, NumError>, stage: Stage, subsystem: usize, t: usize) -> ControlResult<T> {
    match r {
        Ok(v) => Ok(v),
        Err(NumError::Infeasible) => Err(ControlError::Infeasible { stage, subsystem, t }),
        Err(e) => Err(e.into()),
    }
}
