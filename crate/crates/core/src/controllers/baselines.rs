//! Comparison controllers, all built from the same design: a centralized
//! nominal MPC, the inner tube MPC alone, and a decentralized MPC that
//! ignores the coupling.

use nalgebra::{DMatrix, DVector};

use super::condensed::Condensed;
use super::{solved, ControlError, ControlResult, Controllers, InitialConstraint, NominalTrajectory, Stage, AUDIT_TOL};
use crate::geometry::{max_admissible_invariant, HPolytope};
use crate::model::SubsystemModel;
use crate::numkernel::{solve_qp, NumError, QpProblem};
use crate::synthesis::{SubsystemDesign, INVARIANT_ITERATION_CAP};

/// Owner tag of trajectories that span the whole plant.
pub const GLOBAL_OWNER: usize = usize::MAX;

/// Maximal invariant set of `A_ii + B_ii K_T` inside `X ∩ {K_T x ∈ U}`.
pub(super) fn dempc_terminal_set(s: &SubsystemModel, d: &SubsystemDesign) -> ControlResult<HPolytope> {
    let admissible = s.x_set.intersect(&s.u_set.preimage(&d.k_t)?)?;
    Ok(max_admissible_invariant(&(&s.a + &s.b * &d.k_t), &admissible, INVARIANT_ITERATION_CAP)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DempcOutcome {
    pub u: DVector<f64>,
    /// `None` when the local problem was infeasible and the input fell back
    /// to the projection of `K_T x` onto `U`.
    pub trajectory: Option<NominalTrajectory>,
}

impl DempcOutcome {
    pub fn saturated(&self) -> bool {
        self.trajectory.is_none()
    }
}

impl Controllers<'_> {
    /// Centralized nominal MPC on the full plant: `x_{t/t} = x`, constraints
    /// `Π X_i`, `Π U_i`, terminal set `Π X̂̂^F_i`, weights `diag(Q_i)`,
    /// `diag(R_i)`, `diag(P_i)`. Returns the plan and its first input.
    pub fn cmpc(&self, x: &DVector<f64>, t: usize) -> ControlResult<(NominalTrajectory, DVector<f64>)> {
        let sys = self.sys;
        if x.len() != sys.nx() {
            return Err(ControlError::SizeMismatch(format!("global state of length {} for a {}-state plant", x.len(), sys.nx())));
        }
        let (a, b) = (sys.a(), sys.b());
        let mut c = Condensed::new(a, b, self.horizon, Some(x), None);
        let (mut q, mut r, mut p) =
            (DMatrix::zeros(sys.nx(), sys.nx()), DMatrix::zeros(sys.nu(), sys.nu()), DMatrix::zeros(sys.nx(), sys.nx()));
        for (i, (s, d)) in sys.subsystems.iter().zip(&self.design.subsystems).enumerate() {
            let (xo, uo) = (sys.state_offsets[i], sys.input_offsets[i]);
            for k in 0..self.horizon {
                if k > 0 {
                    c.state_in(k, xo, &s.x_set, None);
                }
                c.input_in(k, uo, &s.u_set);
            }
            c.state_in(self.horizon, xo, &d.xf_hathat, None);
            q.view_mut((xo, xo), (s.nx(), s.nx())).copy_from(&d.q);
            r.view_mut((uo, uo), (s.nu(), s.nu())).copy_from(&d.r);
            p.view_mut((xo, xo), (s.nx(), s.nx())).copy_from(&d.p);
        }
        c.quadratic_cost(&q, &r, &p);
        let (states, inputs) = solved(c.solve(), Stage::Cmpc, 0, t)?;
        let traj = NominalTrajectory { owner: GLOBAL_OWNER, stamp: t, states, inputs };
        let mut v = traj.dynamics_residual(a, b, None);
        for (i, (s, d)) in sys.subsystems.iter().zip(&self.design.subsystems).enumerate() {
            let (xo, uo) = (sys.state_offsets[i], sys.input_offsets[i]);
            for k in 0..self.horizon {
                if k > 0 {
                    v = v.max(s.x_set.violation(&traj.states[k].rows(xo, s.nx()).into_owned()));
                }
                v = v.max(s.u_set.violation(&traj.inputs[k].rows(uo, s.nu()).into_owned()));
            }
            v = v.max(d.xf_hathat.violation(&traj.states[self.horizon].rows(xo, s.nx()).into_owned()));
        }
        if v > AUDIT_TOL {
            return Err(ControlError::AuditFailed { stage: Stage::Cmpc, subsystem: 0, detail: format!("constraint violation {v:e}") });
        }
        let u = traj.inputs[0].clone();
        Ok((traj, u))
    }

    /// Decentralized tube MPC: the inner problem with the plain `Z` initial
    /// constraint, applying `û_{t/t} + K_T (x − x̂_{t/t})`.
    pub fn tmpc(&self, i: usize, x: &DVector<f64>, t: usize) -> ControlResult<(NominalTrajectory, DVector<f64>)> {
        let traj = self.solve_inner_with(i, x, t, InitialConstraint::Tube, Stage::Tmpc)?;
        let d = &self.design.subsystems[i];
        let u = &traj.inputs[0] + &d.k_t * (x - &traj.states[0]);
        Ok((traj, u))
    }

    /// Local nominal MPC on `(A_ii, B_ii)` with the untightened sets and a
    /// local terminal set, blind to the coupling. Infeasibility is not fatal:
    /// the input becomes the point of `U_i` nearest to `K_T x`.
    pub fn dempc(&self, i: usize, x: &DVector<f64>, t: usize) -> ControlResult<DempcOutcome> {
        self.check_state(i, x)?;
        let (s, d) = (&self.sys.subsystems[i], &self.design.subsystems[i]);
        let mut c = Condensed::new(&s.a, &s.b, self.horizon, Some(x), None);
        for k in 0..self.horizon {
            if k > 0 {
                c.state_in(k, 0, &s.x_set, None);
            }
            c.input_in(k, 0, &s.u_set);
        }
        c.state_in(self.horizon, 0, &self.local[i].dempc_terminal, None);
        c.quadratic_cost(&d.q, &d.r, &d.p);
        match c.solve() {
            Ok((states, inputs)) => {
                let u = inputs[0].clone();
                Ok(DempcOutcome { u, trajectory: Some(NominalTrajectory { owner: i, stamp: t, states, inputs }) })
            }
            Err(NumError::Infeasible) => Ok(DempcOutcome { u: project(&s.u_set, &(&d.k_t * x))?, trajectory: None }),
            Err(e) => Err(e.into()),
        }
    }
}

/// Euclidean projection onto a polytope.
fn project(set: &HPolytope, y: &DVector<f64>) -> ControlResult<DVector<f64>> {
    if set.contains(y, 0.0) {
        return Ok(y.clone());
    }
    let n = y.len();
    let qp = QpProblem::inequality(DMatrix::identity(n, n) * 2.0, -2.0 * y, set.a().clone(), set.b().clone())?;
    Ok(solve_qp(&qp)?.x)
}
