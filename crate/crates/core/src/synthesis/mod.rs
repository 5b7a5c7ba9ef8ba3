//! Offline construction of the tube ingredients for every subsystem: gains,
//! tube cross-sections, disturbance sets, tightened and terminal sets, cost
//! matrices, and the checks that certify them.

mod cache;
mod checks;
mod terminal;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{
    linear_map, max_admissible_invariant, minkowski_sum, minkowski_sum_all, pontryagin_diff, rpi_outer_approx, rpi_template_approx, GeomError,
    HPolytope, RPI_ITERATION_CAP,
};
use crate::model::{coupling_disturbance_set, CoupledSystem, ModelError, SubsystemModel};
use crate::numkernel::{dlqr, dlyap, NumError};

pub use cache::{content_hash, CacheError};
pub use checks::{validate, Check, ValidationReport, CHECK_TOL};
pub use terminal::coupled_terminal_sets;

/// Iteration cap of the coupled terminal-set fixed point.
pub const TERMINAL_ITERATION_CAP: usize = 100;
/// Iteration cap of the local maximal admissible invariant set computation.
pub const INVARIANT_ITERATION_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("synthesis failed: {check}: {detail}")]
    Failed {
        check: String,
        detail: String,
        /// Checks evaluated before the failure, the failing one last.
        report: ValidationReport,
    },
    #[error("invalid synthesis options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Numerical(#[from] NumError),
}

impl SynthesisError {
    /// Name of the failed check, if the failure is a check.
    pub fn check(&self) -> Option<&str> {
        match self {
            SynthesisError::Failed { check, .. } => Some(check),
            _ => None,
        }
    }
}

pub type SynthesisResult<T> = Result<T, SynthesisError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    /// Tolerance of the mRPI outer approximations.
    pub eps: f64,
    /// Extra contraction `θ ∈ (0, 1]` of the inner tightened sets:
    /// `X̂ = θ(X ⊖ Z)`, `Û = θ(U ⊖ K_T Z)`. `1` is the plain tightening.
    pub inner_scale: f64,
    /// Outer gains. `None` selects `K̂ = K_T`.
    pub k_hat: Option<Vec<DMatrix<f64>>>,
    pub rpi_cap: usize,
    pub invariant_cap: usize,
    pub terminal_cap: usize,
    /// Uniformly spaced facet normals of the 2-D tube cross-sections, on top
    /// of the constraint and gain normals. `0` keeps the exact mRPI
    /// approximation, whose facet count grows with every Minkowski layer.
    pub template_directions: usize,
}

/// Default number of uniform template normals for 2-D subsystems.
pub const TEMPLATE_DIRECTIONS: usize = 128;

impl SynthesisOptions {
    /// Identity weights for every subsystem of `sys`, `eps = 1e-4`.
    pub fn for_system(sys: &CoupledSystem) -> Self {
        Self {
            q: sys.subsystems.iter().map(|s| DMatrix::identity(s.nx(), s.nx())).collect(),
            r: sys.subsystems.iter().map(|s| DMatrix::identity(s.nu(), s.nu())).collect(),
            eps: 1e-4,
            inner_scale: 1.0,
            k_hat: None,
            rpi_cap: RPI_ITERATION_CAP,
            invariant_cap: INVARIANT_ITERATION_CAP,
            terminal_cap: TERMINAL_ITERATION_CAP,
            template_directions: TEMPLATE_DIRECTIONS,
        }
    }

    fn check(&self, sys: &CoupledSystem) -> SynthesisResult<()> {
        let m = sys.len();
        if self.q.len() != m || self.r.len() != m {
            return Err(SynthesisError::InvalidOptions(format!("{m} subsystems need {m} Q and R weights")));
        }
        for (s, (q, r)) in sys.subsystems.iter().zip(self.q.iter().zip(&self.r)) {
            if q.shape() != (s.nx(), s.nx()) || r.shape() != (s.nu(), s.nu()) {
                return Err(SynthesisError::InvalidOptions(format!("weights of subsystem {} have the wrong size", s.index + 1)));
            }
            if (q - q.transpose()).amax() > 1e-12 || (r - r.transpose()).amax() > 1e-12 {
                return Err(SynthesisError::InvalidOptions(format!("weights of subsystem {} are not symmetric", s.index + 1)));
            }
            if q.symmetric_eigenvalues().min() < -1e-12 {
                return Err(SynthesisError::InvalidOptions(format!("Q_{} is not positive semidefinite", s.index + 1)));
            }
            if r.symmetric_eigenvalues().min() <= 0.0 {
                return Err(SynthesisError::InvalidOptions(format!("R_{} is not positive definite", s.index + 1)));
            }
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(SynthesisError::InvalidOptions(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.inner_scale > 0.0 && self.inner_scale <= 1.0) {
            return Err(SynthesisError::InvalidOptions(format!("inner_scale must lie in (0, 1], got {}", self.inner_scale)));
        }
        if let Some(k) = &self.k_hat {
            if k.len() != m || sys.subsystems.iter().zip(k).any(|(s, k)| k.shape() != (s.nu(), s.nx())) {
                return Err(SynthesisError::InvalidOptions("outer gains have the wrong number or size".into()));
            }
        }
        Ok(())
    }
}

/// Everything one subsystem needs online, plus the sets that certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDesign {
    pub index: usize,
    pub k_t: DMatrix<f64>,
    pub k_hat: DMatrix<f64>,
    pub w: HPolytope,
    pub z: HPolytope,
    pub l: HPolytope,
    pub v: HPolytope,
    pub s: HPolytope,
    pub h: HPolytope,
    pub d: HPolytope,
    pub x_hat: HPolytope,
    pub u_hat: HPolytope,
    pub x_hathat: HPolytope,
    pub u_hathat: HPolytope,
    pub xf_hat: HPolytope,
    pub xf_hathat: HPolytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Largest `δ` with `S ⊕ box(0, δ) ⊆ Z`.
    pub delta: f64,
}

impl SubsystemDesign {
    pub fn nx(&self) -> usize {
        self.k_t.ncols()
    }

    pub fn nu(&self) -> usize {
        self.k_t.nrows()
    }

    pub fn distinct_gains(&self) -> bool {
        self.k_hat != self.k_t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeDesign {
    pub subsystems: Vec<SubsystemDesign>,
    pub eps: f64,
    pub inner_scale: f64,
    pub report: ValidationReport,
}

impl TubeDesign {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn get(&self, i: usize) -> &SubsystemDesign {
        &self.subsystems[i]
    }
}

/// Block-diagonal gain `diag(K_1, …, K_M)` on the global state.
pub fn block_diagonal_gain(sys: &CoupledSystem, gains: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(sys.nu(), sys.nx());
    for (i, g) in gains.iter().enumerate() {
        k.view_mut((sys.input_offsets[i], sys.state_offsets[i]), g.shape()).copy_from(g);
    }
    k
}

struct Gate {
    report: ValidationReport,
}

impl Gate {
    fn push(&mut self, c: Check) -> SynthesisResult<()> {
        let failed = !c.passed;
        let (name, detail) = (c.name.clone(), c.detail());
        self.report.checks.push(c);
        if failed {
            return Err(SynthesisError::Failed { check: name, detail, report: self.report.clone() });
        }
        Ok(())
    }

    fn all(&mut self, cs: Vec<Check>) -> SynthesisResult<()> {
        cs.into_iter().try_for_each(|c| self.push(c))
    }
}

impl Gate {
    fn rpi(&self, a_cl: &DMatrix<f64>, w: &HPolytope, opts: &SynthesisOptions, dirs: &[DVector<f64>], what: &str) -> SynthesisResult<HPolytope> {
        let z = if dirs.is_empty() {
            rpi_outer_approx(a_cl, w, opts.eps, opts.rpi_cap)
        } else {
            rpi_template_approx(a_cl, w, opts.eps, opts.rpi_cap, dirs)
        };
        z.map_err(|e| SynthesisError::Failed {
            check: format!("{what} RPI construction"),
            detail: e.to_string(),
            report: self.report.clone(),
        })
    }
}

/// Runs the ten synthesis steps in order. Fails on the first check that does
/// not hold, naming it; on success the design carries the full report from
/// [`validate`].
pub fn synthesize(sys: &CoupledSystem, opts: &SynthesisOptions) -> SynthesisResult<TubeDesign> {
    opts.check(sys)?;
    sys.validate()?;
    let m = sys.len();
    let subs = &sys.subsystems;
    let mut gate = Gate { report: ValidationReport::default() };

    // (1) gains
    let mut k_t = Vec::with_capacity(m);
    for (s, (q, r)) in subs.iter().zip(opts.q.iter().zip(&opts.r)) {
        k_t.push(dlqr(&s.a, &s.b, q, r)?.k);
    }
    let k_hat = opts.k_hat.clone().unwrap_or_else(|| k_t.clone());
    for i in 0..m {
        gate.push(checks::local_schur(sys, i, &k_t[i], "K_T"))?;
        gate.push(checks::local_schur(sys, i, &k_hat[i], "K̂"))?;
    }
    gate.push(checks::global_schur(sys, &k_t.iter().collect::<Vec<_>>(), "K_T"))?;
    gate.push(checks::global_schur(sys, &k_hat.iter().collect::<Vec<_>>(), "K̂"))?;

    let dirs: Vec<Vec<DVector<f64>>> =
        (0..m).map(|i| template_directions(&subs[i], &[&k_t[i], &k_hat[i]], opts.template_directions)).collect();
    let a_t: Vec<DMatrix<f64>> = (0..m).map(|i| &subs[i].a + &subs[i].b * &k_t[i]).collect();
    let a_h: Vec<DMatrix<f64>> = (0..m).map(|i| &subs[i].a + &subs[i].b * &k_hat[i]).collect();

    // (2) inner tube
    let mut w = Vec::with_capacity(m);
    let mut z = Vec::with_capacity(m);
    for i in 0..m {
        w.push(coupling_disturbance_set(sys, i)?);
        let zi = gate.rpi(&a_t[i], &w[i], opts, &dirs[i], &format!("Z_{}", i + 1))?;
        gate.push(checks::rpi(&a_t[i], &w[i], &zi, &format!("Z_{} RPI", i + 1))?)?;
        z.push(zi);
    }

    // (3) inner tightening
    let mut x_hat = Vec::with_capacity(m);
    let mut u_hat = Vec::with_capacity(m);
    for i in 0..m {
        let s = &subs[i];
        let xi = pontryagin_diff(&s.x_set, &z[i])?;
        let ui = pontryagin_diff(&s.u_set, &linear_map(&k_t[i], &z[i])?)?;
        let (xi, ui) = if opts.inner_scale < 1.0 {
            (scale_or_keep(&xi, opts.inner_scale)?, scale_or_keep(&ui, opts.inner_scale)?)
        } else {
            (xi, ui)
        };
        gate.push(checks::origin_interior(&xi, &format!("X̂_{} non-empty with origin interior", i + 1))?)?;
        gate.push(checks::origin_interior(&ui, &format!("Û_{} non-empty with origin interior", i + 1))?)?;
        x_hat.push(xi);
        u_hat.push(ui);
    }

    // (4) input deviation bound
    let l: Vec<HPolytope> =
        (0..m).map(|i| minkowski_sum(&subs[i].u_set, &u_hat[i].negate())).collect::<Result<_, _>>()?;

    // (5) reduced disturbance
    let mut v = Vec::with_capacity(m);
    for i in 0..m {
        let vi = reduced_disturbance_set(sys, i, &z, &l)?;
        gate.push(checks::assumption4(&vi, &w[i], i)?)?;
        v.push(vi);
    }

    // (6) outer tube
    let mut s_set = Vec::with_capacity(m);
    let mut delta = Vec::with_capacity(m);
    for i in 0..m {
        let si = gate.rpi(&a_h[i], &v[i], opts, &dirs[i], &format!("S_{}", i + 1))?;
        gate.push(checks::rpi(&a_h[i], &v[i], &si, &format!("S_{} RPI", i + 1))?)?;
        let di = checks::box_margin(&si, &z[i])?;
        gate.push(checks::theorem1(di, &z[i], i)?)?;
        s_set.push(si);
        delta.push(di);
    }

    // (7) outer tightening
    let mut x_hh = Vec::with_capacity(m);
    let mut u_hh = Vec::with_capacity(m);
    for i in 0..m {
        let s = &subs[i];
        let xi = pontryagin_diff(&s.x_set, &s_set[i])?;
        let ui = pontryagin_diff(&s.u_set, &linear_map(&k_hat[i], &s_set[i])?)?;
        gate.push(checks::origin_interior(&xi, &format!("X̂̂_{} non-empty with origin interior", i + 1))?)?;
        gate.push(checks::origin_interior(&ui, &format!("Û̂_{} non-empty with origin interior", i + 1))?)?;
        x_hh.push(xi);
        u_hh.push(ui);
    }

    // (9a) outer terminal sets; needed by H when the gains differ
    let xf_hh = coupled_terminal_sets(sys, &k_hat, &x_hh, &u_hh, opts.invariant_cap, opts.terminal_cap).map_err(|e| {
        SynthesisError::Failed {
            check: "X̂̂^F product invariance".into(),
            detail: e.to_string(),
            report: gate.report.clone(),
        }
    })?;
    for i in 0..m {
        gate.all(checks::outer_terminal(sys, i, &k_hat, &xf_hh, &x_hh[i], &u_hh[i])?)?;
    }

    // (8) BRF set
    let mut d = Vec::with_capacity(m);
    let mut h = Vec::with_capacity(m);
    for i in 0..m {
        let di = reference_disturbance_set(sys, i, &x_hat, &u_hat)?;
        let drive = brf_disturbance(&subs[i].b, &k_hat[i], &k_t[i], &xf_hh[i], &di)?;
        let hi = gate.rpi(&a_h[i], &drive, opts, &dirs[i], &format!("H_{}", i + 1))?;
        gate.push(checks::rpi(&a_h[i], &drive, &hi, &format!("Assumption 5: H_{} RPI", i + 1))?)?;
        gate.push(checks::tube_nesting(&s_set[i], &hi, &z[i], i)?)?;
        gate.push(checks::brf_box(&hi, delta[i], i)?)?;
        d.push(di);
        h.push(hi);
    }

    // (9b) inner terminal sets
    let mut xf_hat = Vec::with_capacity(m);
    for i in 0..m {
        let s = &subs[i];
        let room = pontryagin_diff(&xf_hh[i], &h[i])?;
        let admissible = room.intersect(&x_hat[i])?.intersect(&u_hat[i].preimage(&k_t[i])?)?;
        gate.push(checks::origin_interior(&admissible, &format!("X̂̂^F_{} ⊖ H_{} admits an inner terminal set", i + 1, i + 1))?)?;
        let xf = max_admissible_invariant(&a_t[i], &admissible, opts.invariant_cap)?;
        gate.all(checks::inner_terminal(s, &k_t[i], &xf, &x_hat[i], &u_hat[i], &xf_hh[i], &h[i], i)?)?;
        xf_hat.push(xf);
    }

    // (10) terminal weights
    let mut p = Vec::with_capacity(m);
    for i in 0..m {
        let qk = &opts.q[i] + k_hat[i].transpose() * &opts.r[i] * &k_hat[i];
        p.push(dlyap(&a_h[i], &qk)?);
    }

    let subsystems = (0..m)
        .map(|i| SubsystemDesign {
            index: i,
            k_t: k_t[i].clone(),
            k_hat: k_hat[i].clone(),
            w: w[i].clone(),
            z: z[i].clone(),
            l: l[i].clone(),
            v: v[i].clone(),
            s: s_set[i].clone(),
            h: h[i].clone(),
            d: d[i].clone(),
            x_hat: x_hat[i].clone(),
            u_hat: u_hat[i].clone(),
            x_hathat: x_hh[i].clone(),
            u_hathat: u_hh[i].clone(),
            xf_hat: xf_hat[i].clone(),
            xf_hathat: xf_hh[i].clone(),
            q: opts.q[i].clone(),
            r: opts.r[i].clone(),
            p: p[i].clone(),
            delta: delta[i],
        })
        .collect();
    let mut design = TubeDesign { subsystems, eps: opts.eps, inner_scale: opts.inner_scale, report: ValidationReport::default() };
    design.report = validate(sys, &design)?;
    if let Some(bad) = design.report.checks.iter().find(|c| !c.passed) {
        return Err(SynthesisError::Failed { check: bad.name.clone(), detail: bad.detail(), report: design.report });
    }
    Ok(design)
}

/// Template normals for a 2-D subsystem: `count` uniform angles, the state
/// constraint normals and the input constraint normals pulled back through
/// each gain. Empty (exact sets) in other dimensions or when `count` is 0.
fn template_directions(s: &SubsystemModel, gains: &[&DMatrix<f64>], count: usize) -> Vec<DVector<f64>> {
    if s.nx() != 2 || count == 0 {
        return Vec::new();
    }
    let mut dirs: Vec<DVector<f64>> = (0..count)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect();
    let mut extra: Vec<DVector<f64>> = s.x_set.a().row_iter().map(|r| r.transpose()).collect();
    for k in gains {
        for r in s.u_set.a().row_iter() {
            extra.push((r * *k).transpose());
        }
    }
    for d in extra {
        let norm = d.norm();
        if norm > 1e-12 {
            let d = d / norm;
            if !dirs.iter().any(|e| (e - &d).amax() <= 1e-12) {
                dirs.push(d);
            }
        }
    }
    dirs
}

fn scale_or_keep(p: &HPolytope, s: f64) -> SynthesisResult<HPolytope> {
    if p.is_empty() {
        return Ok(p.clone());
    }
    Ok(p.scale(s)?)
}

/// `V_i = ⊕_{j ∈ N_i} (A_ij Z_j ⊕ B_ij L_j)`; significant residual blocks
/// are not compensated by any broadcast and enter with `X_j`, `U_j`.
pub fn reduced_disturbance_set(sys: &CoupledSystem, i: usize, z: &[HPolytope], l: &[HPolytope]) -> SynthesisResult<HPolytope> {
    let s = &sys.subsystems[i];
    let mut parts = Vec::new();
    for (j, c) in &s.couplings {
        parts.push(minkowski_sum(&linear_map(&c.a, &z[*j])?, &linear_map(&c.b, &l[*j])?)?);
    }
    for (j, c) in s.significant_residual() {
        let nb = &sys.subsystems[j];
        parts.push(minkowski_sum(&linear_map(&c.a, &nb.x_set)?, &linear_map(&c.b, &nb.u_set)?)?);
    }
    Ok(minkowski_sum_all(&parts, s.nx())?)
}

/// `D_i = ⊕_{j ∈ N_i} (A_ij X̂_j ⊕ B_ij Û_j)`, over the declared neighbours.
pub fn reference_disturbance_set(
    sys: &CoupledSystem,
    i: usize,
    x_hat: &[HPolytope],
    u_hat: &[HPolytope],
) -> SynthesisResult<HPolytope> {
    let s = &sys.subsystems[i];
    let mut parts = Vec::new();
    for (j, c) in &s.couplings {
        parts.push(minkowski_sum(&linear_map(&c.a, &x_hat[*j])?, &linear_map(&c.b, &u_hat[*j])?)?);
    }
    Ok(minkowski_sum_all(&parts, s.nx())?)
}

/// Disturbance the BRF set has to absorb: `D_i`, plus
/// `B_ii (K̂_i − K_T,i) X̂̂^F_i` when the gains differ.
fn brf_disturbance(
    b: &DMatrix<f64>,
    k_hat: &DMatrix<f64>,
    k_t: &DMatrix<f64>,
    xf_hh: &HPolytope,
    d: &HPolytope,
) -> SynthesisResult<HPolytope> {
    if k_hat == k_t {
        return Ok(d.clone());
    }
    Ok(minkowski_sum(&linear_map(&(b * (k_hat - k_t)), xf_hh)?, d)?)
}

/// Neighbour index → coupling blocks, declared and residual together.
pub(crate) fn all_couplings(sys: &CoupledSystem, i: usize) -> BTreeMap<usize, (&DMatrix<f64>, &DMatrix<f64>)> {
    let s = &sys.subsystems[i];
    s.couplings.iter().chain(s.residual.iter()).map(|(j, c)| (*j, (&c.a, &c.b))).collect()
}

pub(crate) fn unit(n: usize, j: usize, sign: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = sign;
    e
}
