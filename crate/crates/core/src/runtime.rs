//! Closed-loop execution of the chained controllers over all agents, with a
//! synchronous broadcast between the inner and outer phases, and of the
//! comparison controllers on the same plant.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DVector;

use crate::controllers::{
    control_action, stage_cost, ControlError, ControlResult, Controllers, InitialConstraint, NominalTrajectory, Stage,
    DEFAULT_HORIZON,
};
use crate::model::{step_true_plant, CoupledSystem};
use crate::synthesis::TubeDesign;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControllerKind {
    /// Inner and outer tube MPC chained per Algorithm 1.
    Chain,
    Cmpc,
    Tmpc,
    Dempc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [ControllerKind::Chain, ControllerKind::Cmpc, ControllerKind::Tmpc, ControllerKind::Dempc];

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Chain => "chain",
            ControllerKind::Cmpc => "cmpc",
            ControllerKind::Tmpc => "tmpc",
            ControllerKind::Dempc => "dempc",
        }
    }

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Chain => "Algorithm 1",
            ControllerKind::Cmpc => "CMPC",
            ControllerKind::Tmpc => "TMPC",
            ControllerKind::Dempc => "DeMPC",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown controller '{s}' (expected chain, cmpc, tmpc or dempc)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    pub horizon: usize,
    /// Inner re-solve period `T`; the reference is shifted in between.
    pub period: usize,
    pub initial: InitialConstraint,
    /// Run the agents of each phase on separate threads.
    pub parallel: bool,
    /// Order in which agents are visited within a phase; `None` is `0..M`.
    pub order: Option<Vec<usize>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { steps: 50, horizon: DEFAULT_HORIZON, period: 1, initial: InitialConstraint::Nested, parallel: false, order: None }
    }
}

/// Per-step outcome of an agent, written to the CSV as its numeric code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    /// Inner reference shifted instead of re-solved.
    Shifted,
    /// DeMPC fallback after an infeasible local problem.
    Saturated,
}

impl SolveStatus {
    pub fn code(self) -> u8 {
        match self {
            SolveStatus::Solved => 0,
            SolveStatus::Shifted => 1,
            SolveStatus::Saturated => 2,
        }
    }
}

/// Algorithm 1 bookkeeping of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub index: usize,
    /// Number of inner solves so far.
    pub lambda: usize,
    pub reference: Option<NominalTrajectory>,
    pub outer: Option<NominalTrajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub sender: usize,
    pub stamp: usize,
    pub trajectory: NominalTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub status: Vec<SolveStatus>,
    pub stage_costs: Vec<f64>,
    pub inner: Vec<Option<NominalTrajectory>>,
    pub outer: Vec<Option<NominalTrajectory>>,
    /// `x^i − x̂^i_{t/t}`.
    pub z: Vec<Option<DVector<f64>>>,
    /// `x^i − x̂̂^i_{t/t}`.
    pub s: Vec<Option<DVector<f64>>>,
    /// `x̂̂^i_{t/t} − x̂^i_{t/t}`.
    pub e: Vec<Option<DVector<f64>>>,
    /// Largest violation of the outer constraints by the reference
    /// candidate; `INFINITY` when no candidate could be formed.
    pub candidate_violation: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub t: usize,
    pub subsystem: usize,
    pub error: ControlError,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t = {}, subsystem {}: {}", self.t, self.subsystem + 1, self.error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub controller: ControllerKind,
    pub horizon: usize,
    pub period: usize,
    pub config_hash: String,
    pub records: Vec<StepRecord>,
    /// State after the last recorded step.
    pub final_state: DVector<f64>,
    /// Set when a fatal error ended the run early.
    pub failure: Option<RunFailure>,
}

impl SimLog {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    /// Stage-cost sum of subsystem `i` over the recorded steps.
    pub fn subsystem_cost(&self, i: usize) -> f64 {
        self.records.iter().map(|r| r.stage_costs[i]).sum()
    }

    /// Stage-cost sum over all subsystems and recorded steps.
    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.stage_costs.iter().sum::<f64>()).sum()
    }

    pub fn saturations(&self) -> usize {
        self.records.iter().map(|r| r.status.iter().filter(|s| **s == SolveStatus::Saturated).count()).sum()
    }

    /// Worst violation of the state and input constraints along the run,
    /// final state included.
    pub fn constraint_violation(&self, sys: &CoupledSystem) -> f64 {
        let mut v = 0.0f64;
        for r in &self.records {
            for (i, s) in sys.subsystems.iter().enumerate() {
                v = v.max(s.x_set.violation(&sys.local_state(&r.x, i))).max(s.u_set.violation(&sys.local_input(&r.u, i)));
            }
        }
        for (i, s) in sys.subsystems.iter().enumerate() {
            v = v.max(s.x_set.violation(&sys.local_state(&self.final_state, i)));
        }
        v
    }

    /// One row per step: `t`, states, inputs, per-agent status codes and
    /// stage costs; a last row holds the final state only. Numbers carry 17
    /// significant digits.
    pub fn to_csv(&self, sys: &CoupledSystem) -> String {
        let (n, m, agents) = (sys.nx(), sys.nu(), sys.len());
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=m).map(|k| format!("u{k}")));
        header.extend((1..=agents).map(|k| format!("status{k}")));
        header.extend((1..=agents).map(|k| format!("cost{k}")));
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x.iter().map(|v| format!("{v:.16e}")));
            row.extend(r.u.iter().map(|v| format!("{v:.16e}")));
            row.extend(r.status.iter().map(|s| s.code().to_string()));
            row.extend(r.stage_costs.iter().map(|v| format!("{v:.16e}")));
            let _ = writeln!(out, "{}", row.join(","));
        }
        let t_end = self.records.last().map_or(0, |r| r.t + 1);
        let mut row = vec![t_end.to_string()];
        row.extend(self.final_state.iter().map(|v| format!("{v:.16e}")));
        row.extend(std::iter::repeat_n(String::new(), m + 2 * agents));
        let _ = writeln!(out, "{}", row.join(","));
        out
    }
}

fn agent_order(m: usize, opts: &RunOptions) -> ControlResult<Vec<usize>> {
    match &opts.order {
        None => Ok((0..m).collect()),
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..m).collect::<Vec<_>>() {
                return Err(ControlError::SizeMismatch(format!("agent order {o:?} is not a permutation of 0..{m}")));
            }
            Ok(o.clone())
        }
    }
}

/// Evaluates `f` for every agent, visiting them in `order` (on threads when
/// `parallel`), and returns the results indexed by agent.
fn per_agent<T: Send>(order: &[usize], parallel: bool, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let mut out: Vec<Option<T>> = (0..order.len()).map(|_| None).collect();
    if parallel {
        let f = &f;
        std::thread::scope(|scope| {
            let handles: Vec<_> = order.iter().map(|&i| (i, scope.spawn(move || f(i)))).collect();
            for (i, h) in handles {
                out[i] = Some(h.join().expect("agent thread panicked"));
            }
        });
    } else {
        for &i in order {
            out[i] = Some(f(i));
        }
    }
    out.into_iter().map(|r| r.expect("every agent visited")).collect()
}

fn check_setup(sys: &CoupledSystem, x0: &DVector<f64>, opts: &RunOptions) -> ControlResult<Vec<usize>> {
    if x0.len() != sys.nx() {
        return Err(ControlError::SizeMismatch(format!("initial state of length {} for a {}-state plant", x0.len(), sys.nx())));
    }
    if opts.period == 0 {
        return Err(ControlError::SizeMismatch("the inner period must be at least 1".into()));
    }
    agent_order(sys.len(), opts)
}

fn stage_costs(sys: &CoupledSystem, design: &TubeDesign, x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
    (0..sys.len())
        .map(|i| {
            let d = &design.subsystems[i];
            stage_cost(&sys.local_state(x, i), &sys.local_input(u, i), &d.q, &d.r)
        })
        .collect()
}

fn empty_record(t: usize, x: &DVector<f64>, m: usize) -> StepRecord {
    StepRecord {
        t,
        x: x.clone(),
        u: DVector::zeros(0),
        status: vec![SolveStatus::Solved; m],
        stage_costs: Vec::new(),
        inner: vec![None; m],
        outer: vec![None; m],
        z: vec![None; m],
        s: vec![None; m],
        e: vec![None; m],
        candidate_violation: vec![None; m],
    }
}

/// The first failing agent in index order, whatever the schedule.
fn first_error<T>(results: Vec<ControlResult<T>>, t: usize) -> Result<Vec<T>, RunFailure> {
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(error) => return Err(RunFailure { t, subsystem: i, error }),
        }
    }
    Ok(out)
}

/// Algorithm 1 over all agents: measure, inner solve at `t = λT` (shift
/// otherwise), broadcast to neighbours, outer solve, apply
/// `û̂ + K̂(x − x̂̂)` to the true plant.
pub fn run(sys: &CoupledSystem, design: &TubeDesign, x0: &DVector<f64>, opts: &RunOptions) -> ControlResult<SimLog> {
    let order = check_setup(sys, x0, opts)?;
    let ctl = Controllers::new(sys, design, opts.horizon, opts.initial)?;
    let m = sys.len();
    let mut agents: Vec<AgentState> =
        (0..m).map(|index| AgentState { index, lambda: 0, reference: None, outer: None }).collect();
    let mut log = new_log(ControllerKind::Chain, opts, x0);
    let mut x = x0.clone();
    for t in 0..opts.steps {
        // phase 1: references
        let refs = per_agent(&order, opts.parallel, |i| -> ControlResult<(NominalTrajectory, SolveStatus)> {
            let a = &agents[i];
            if t == a.lambda * opts.period {
                Ok((ctl.solve_inner(i, &sys.local_state(&x, i), t)?, SolveStatus::Solved))
            } else {
                let prev = a.reference.as_ref().expect("reference exists after the first solve");
                Ok((ctl.shift_inner(prev)?, SolveStatus::Shifted))
            }
        });
        let refs = match first_error(refs, t) {
            Ok(r) => r,
            Err(f) => return Ok(log.fail(f, x)),
        };
        for (a, (r, st)) in agents.iter_mut().zip(&refs) {
            if *st == SolveStatus::Solved {
                a.lambda += 1;
            }
            a.reference = Some(r.clone());
        }

        // barrier: every agent hears its neighbours' references of this step
        let bus: Vec<Broadcast> =
            refs.iter().map(|(r, _)| Broadcast { sender: r.owner, stamp: t, trajectory: r.clone() }).collect();
        let inbox: Vec<BTreeMap<usize, &NominalTrajectory>> = (0..m)
            .map(|i| {
                sys.subsystems[i]
                    .neighbors()
                    .filter_map(|j| bus.get(j).filter(|b| b.stamp == t).map(|b| (j, &b.trajectory)))
                    .collect()
            })
            .collect();

        // phase 2: outer solves and control actions
        let outer = per_agent(&order, opts.parallel, |i| -> ControlResult<(NominalTrajectory, DVector<f64>, f64)> {
            let xi = sys.local_state(&x, i);
            let own = &refs[i].0;
            let preview = ctl.preview_disturbance(i, &inbox[i])?;
            let traj = ctl.solve_outer(i, &xi, own, &preview, t)?;
            let cand = match ctl.theorem3_candidate(i, &xi, own, &preview)? {
                Some(c) => ctl.outer_violation(i, &xi, own, &preview, &c)?,
                None => f64::INFINITY,
            };
            let u = control_action(&xi, &traj, &design.subsystems[i]);
            Ok((traj, u, cand))
        });
        let outer = match first_error(outer, t) {
            Ok(r) => r,
            Err(f) => return Ok(log.fail(f, x)),
        };

        let mut u = DVector::zeros(sys.nu());
        let mut rec = empty_record(t, &x, m);
        for i in 0..m {
            let (traj, ui, cand) = &outer[i];
            u.rows_mut(sys.input_offsets[i], ui.len()).copy_from(ui);
            let xi = sys.local_state(&x, i);
            let (xh, xhh) = (&refs[i].0.states[0], &traj.states[0]);
            rec.status[i] = refs[i].1;
            rec.z[i] = Some(&xi - xh);
            rec.s[i] = Some(&xi - xhh);
            rec.e[i] = Some(xhh - xh);
            rec.candidate_violation[i] = Some(*cand);
            rec.inner[i] = Some(refs[i].0.clone());
            rec.outer[i] = Some(traj.clone());
            agents[i].outer = Some(traj.clone());
        }
        x = log.push(sys, design, rec, u, x)?;
    }
    log.final_state = x;
    Ok(log)
}

/// One of the comparison controllers in closed loop.
pub fn run_baseline(
    sys: &CoupledSystem,
    design: &TubeDesign,
    x0: &DVector<f64>,
    opts: &RunOptions,
    which: ControllerKind,
) -> ControlResult<SimLog> {
    if which == ControllerKind::Chain {
        return run(sys, design, x0, opts);
    }
    let order = check_setup(sys, x0, opts)?;
    let ctl = Controllers::new(sys, design, opts.horizon, opts.initial)?;
    let m = sys.len();
    let mut log = new_log(which, opts, x0);
    let mut x = x0.clone();
    for t in 0..opts.steps {
        let mut rec = empty_record(t, &x, m);
        let mut u = DVector::zeros(sys.nu());
        match which {
            ControllerKind::Cmpc => match ctl.cmpc(&x, t) {
                Ok((_, ug)) => u = ug,
                Err(error) => {
                    let subsystem = match &error {
                        ControlError::Infeasible { subsystem, .. } => *subsystem,
                        _ => 0,
                    };
                    return Ok(log.fail(RunFailure { t, subsystem, error }, x));
                }
            },
            ControllerKind::Tmpc => {
                let res = per_agent(&order, opts.parallel, |i| ctl.tmpc(i, &sys.local_state(&x, i), t));
                let res = match first_error(res, t) {
                    Ok(r) => r,
                    Err(f) => return Ok(log.fail(f, x)),
                };
                for (i, (traj, ui)) in res.into_iter().enumerate() {
                    u.rows_mut(sys.input_offsets[i], ui.len()).copy_from(&ui);
                    rec.z[i] = Some(sys.local_state(&x, i) - &traj.states[0]);
                    rec.inner[i] = Some(traj);
                }
            }
            ControllerKind::Dempc => {
                let res = per_agent(&order, opts.parallel, |i| ctl.dempc(i, &sys.local_state(&x, i), t));
                let res = match first_error(res, t) {
                    Ok(r) => r,
                    Err(f) => return Ok(log.fail(f, x)),
                };
                for (i, out) in res.into_iter().enumerate() {
                    u.rows_mut(sys.input_offsets[i], out.u.len()).copy_from(&out.u);
                    if out.saturated() {
                        rec.status[i] = SolveStatus::Saturated;
                    }
                    rec.inner[i] = out.trajectory;
                }
            }
            ControllerKind::Chain => unreachable!("handled above"),
        }
        x = log.push(sys, design, rec, u, x)?;
    }
    log.final_state = x;
    Ok(log)
}

fn new_log(controller: ControllerKind, opts: &RunOptions, x0: &DVector<f64>) -> SimLog {
    SimLog {
        controller,
        horizon: opts.horizon,
        period: opts.period,
        config_hash: String::new(),
        records: Vec::with_capacity(opts.steps),
        final_state: x0.clone(),
        failure: None,
    }
}

impl SimLog {
    fn push(
        &mut self,
        sys: &CoupledSystem,
        design: &TubeDesign,
        mut rec: StepRecord,
        u: DVector<f64>,
        x: DVector<f64>,
    ) -> ControlResult<DVector<f64>> {
        let next = step_true_plant(sys, &x, &u).map_err(|e| ControlError::SizeMismatch(e.to_string()))?;
        rec.stage_costs = stage_costs(sys, design, &x, &u);
        rec.u = u;
        self.records.push(rec);
        Ok(next)
    }

    fn fail(mut self, failure: RunFailure, x: DVector<f64>) -> SimLog {
        self.final_state = x;
        self.failure = Some(failure);
        self
    }
}

/// Whether a failure is a loss of feasibility rather than a numerical or
/// setup problem.
pub fn is_infeasibility(e: &ControlError) -> bool {
    matches!(e, ControlError::Infeasible { .. } | ControlError::CandidateRejected { .. })
}

/// Stage at which a failure occurred, when known.
pub fn failure_stage(e: &ControlError) -> Option<Stage> {
    match e {
        ControlError::Infeasible { stage, .. } | ControlError::AuditFailed { stage, .. } => Some(*stage),
        ControlError::CandidateRejected { .. } => Some(Stage::Outer),
        _ => None,
    }
}
