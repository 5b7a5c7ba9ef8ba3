use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{all_couplings, block_diagonal_gain, unit, SynthesisError, SynthesisResult, TubeDesign};
use crate::geometry::{support, GeomResult, HPolytope};
use crate::model::{CoupledSystem, SubsystemModel};
use crate::numkernel::spectral_radius;

/// Slack allowed on non-strict inclusion checks.
pub const CHECK_TOL: f64 = 1e-8;

/// One named design condition and the margin by which it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// Strict checks need a positive margin, the others `≥ −CHECK_TOL`.
    pub strict: bool,
    pub margin: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, strict: bool, margin: f64) -> Self {
        let passed = if strict { margin > 0.0 } else { margin >= -CHECK_TOL };
        Self { name: name.into(), strict, margin, passed }
    }

    pub fn detail(&self) -> String {
        let need = if self.strict { "> 0".to_string() } else { format!("≥ -{CHECK_TOL:e}") };
        format!("margin {:.6e} (needs {need})", self.margin)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per check: `PASS|FAIL strict|tol <margin> <name>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {} {:e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                if c.strict { "strict" } else { "tol" },
                c.margin,
                c.name
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut checks = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut it = line.splitn(4, ' ');
            let (Some(status), Some(kind), Some(margin), Some(name)) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(format!("malformed check line '{line}'"));
            };
            let strict = match kind {
                "strict" => true,
                "tol" => false,
                _ => return Err(format!("unknown check kind '{kind}'")),
            };
            let margin: f64 = margin.parse().map_err(|e| format!("bad margin '{margin}': {e}"))?;
            let c = Check::new(name, strict, margin);
            if c.passed != (status == "PASS") {
                return Err(format!("status of '{name}' does not match its margin"));
            }
            checks.push(c);
        }
        Ok(Self { checks })
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let pad = width - c.name.chars().count();
            let _ = writeln!(
                s,
                "{}  {}{}  margin {:>13.6e}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                " ".repeat(pad),
                c.margin
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

/// `min_rows(β − Σ_k h(P_k, M_kᵀ a))` over the canonical rows `(a, β)` of
/// `q`. A `None` map is the identity.
fn slack(terms: &[(&HPolytope, Option<&DMatrix<f64>>)], q: &HPolytope) -> GeomResult<f64> {
    let qc = q.canonicalize()?;
    if qc.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut margin = f64::INFINITY;
    for r in 0..qc.num_rows() {
        let a = qc.a().row(r).transpose();
        let mut total = 0.0;
        for (p, m) in terms {
            if p.is_empty() {
                return Ok(f64::NEG_INFINITY);
            }
            total += match m {
                Some(m) => support(p, &(m.transpose() * &a))?,
                None => support(p, &a)?,
            };
        }
        margin = margin.min(qc.b()[r] - total);
    }
    Ok(margin)
}

fn closed_loop(s: &SubsystemModel, k: &DMatrix<f64>) -> DMatrix<f64> {
    &s.a + &s.b * k
}

fn schur_margin(a: &DMatrix<f64>) -> f64 {
    spectral_radius(a).map(|r| 1.0 - r).unwrap_or(f64::NEG_INFINITY)
}

pub(super) fn local_schur(sys: &CoupledSystem, i: usize, k: &DMatrix<f64>, label: &str) -> Check {
    let id = i + 1;
    Check::new(format!("A_{id}{id} + B_{id}{id} {label},{id} Schur"), true, schur_margin(&closed_loop(&sys.subsystems[i], k)))
}

pub(super) fn global_schur(sys: &CoupledSystem, gains: &[&DMatrix<f64>], label: &str) -> Check {
    let k = block_diagonal_gain(sys, gains);
    Check::new(format!("global A + B diag({label}) Schur"), true, schur_margin(&(sys.a() + sys.b() * k)))
}

/// `A_cl Z ⊕ W ⊆ Z`.
pub(super) fn rpi(a_cl: &DMatrix<f64>, w: &HPolytope, z: &HPolytope, name: &str) -> GeomResult<Check> {
    Ok(Check::new(name, false, slack(&[(z, Some(a_cl)), (w, None)], z)?))
}

pub(super) fn origin_interior(p: &HPolytope, name: &str) -> GeomResult<Check> {
    if p.is_empty() {
        return Ok(Check::new(name, true, f64::NEG_INFINITY));
    }
    let c = p.canonicalize()?;
    let margin = if c.is_empty() { f64::NEG_INFINITY } else { c.b().min() };
    Ok(Check::new(name, true, margin))
}

/// `V_i ⊂ int W_i`. An uncoupled subsystem has `W_i = V_i = {0}` and only
/// the plain inclusion is required.
pub(super) fn assumption4(v: &HPolytope, w: &HPolytope, i: usize) -> GeomResult<Check> {
    let id = i + 1;
    let strict = reach(w)? > CHECK_TOL;
    Ok(Check::new(format!("Assumption 4: V_{id} ⊂ interior of W_{id}"), strict, slack(&[(v, None)], w)?))
}

/// Largest coordinate reached by `p`.
fn reach(p: &HPolytope) -> GeomResult<f64> {
    let n = p.dim();
    let mut r: f64 = 0.0;
    for j in 0..n {
        for sign in [1.0, -1.0] {
            r = r.max(support(p, &unit(n, j, sign))?);
        }
    }
    Ok(r)
}

/// Largest `δ` with `S ⊕ box(0, δ) ⊆ Z`.
pub(super) fn box_margin(s: &HPolytope, z: &HPolytope) -> GeomResult<f64> {
    let zc = z.canonicalize()?;
    let mut delta = f64::INFINITY;
    for r in 0..zc.num_rows() {
        let a = zc.a().row(r).transpose();
        delta = delta.min((zc.b()[r] - support(s, &a)?) / a.abs().sum());
    }
    Ok(delta)
}

/// `δ_i > 0`; an uncoupled subsystem has `S_i = Z_i = {0}` and `δ_i = 0`.
pub(super) fn theorem1(delta: f64, z: &HPolytope, i: usize) -> GeomResult<Check> {
    let id = i + 1;
    Ok(Check::new(format!("Theorem 1: S_{id} ⊂ interior of Z_{id} (δ_{id})"), reach(z)? > CHECK_TOL, delta))
}

pub(super) fn tube_nesting(s: &HPolytope, h: &HPolytope, z: &HPolytope, i: usize) -> GeomResult<Check> {
    let id = i + 1;
    Ok(Check::new(format!("S_{id} ⊕ H_{id} ⊆ Z_{id}"), false, slack(&[(s, None), (h, None)], z)?))
}

pub(super) fn brf_box(h: &HPolytope, delta: f64, i: usize) -> GeomResult<Check> {
    let id = i + 1;
    Ok(Check::new(format!("H_{id} ⊆ box(δ_{id})"), false, delta - reach(h)?))
}

/// Admissibility of `X̂̂^F_i` and invariance of the product under the
/// global closed loop with `diag(K̂)`.
pub(super) fn outer_terminal(
    sys: &CoupledSystem,
    i: usize,
    k_hat: &[DMatrix<f64>],
    xf: &[HPolytope],
    x_hh: &HPolytope,
    u_hh: &HPolytope,
) -> GeomResult<Vec<Check>> {
    let id = i + 1;
    let s = &sys.subsystems[i];
    let a_cl = closed_loop(s, &k_hat[i]);
    let cross: Vec<(usize, DMatrix<f64>)> =
        all_couplings(sys, i).into_iter().map(|(j, (a, b))| (j, a + b * &k_hat[j])).collect();
    let mut terms: Vec<(&HPolytope, Option<&DMatrix<f64>>)> = vec![(&xf[i], Some(&a_cl))];
    terms.extend(cross.iter().map(|(j, m)| (&xf[*j], Some(m))));
    Ok(vec![
        origin_interior(&xf[i], &format!("X̂̂^F_{id} has origin interior"))?,
        Check::new(format!("X̂̂^F_{id} ⊆ X̂̂_{id}"), false, slack(&[(&xf[i], None)], x_hh)?),
        Check::new(format!("K̂_{id} X̂̂^F_{id} ⊆ Û̂_{id}"), false, slack(&[(&xf[i], Some(&k_hat[i]))], u_hh)?),
        Check::new(format!("X̂̂^F product invariance, row block {id}"), false, slack(&terms, &xf[i])?),
    ])
}

#[allow(clippy::too_many_arguments)]
pub(super) fn inner_terminal(
    s: &SubsystemModel,
    k_t: &DMatrix<f64>,
    xf: &HPolytope,
    x_hat: &HPolytope,
    u_hat: &HPolytope,
    xf_hh: &HPolytope,
    h: &HPolytope,
    i: usize,
) -> GeomResult<Vec<Check>> {
    let id = i + 1;
    let a_cl = closed_loop(s, k_t);
    Ok(vec![
        origin_interior(xf, &format!("X̂^F_{id} has origin interior"))?,
        Check::new(format!("X̂^F_{id} ⊆ X̂_{id}"), false, slack(&[(xf, None)], x_hat)?),
        Check::new(format!("K_T,{id} X̂^F_{id} ⊆ Û_{id}"), false, slack(&[(xf, Some(k_t))], u_hat)?),
        Check::new(format!("X̂^F_{id} invariant"), false, slack(&[(xf, Some(&a_cl))], xf)?),
        Check::new(format!("X̂^F_{id} ⊆ X̂̂^F_{id} ⊖ H_{id}"), false, slack(&[(xf, None), (h, None)], xf_hh)?),
    ])
}

/// Re-verifies every design condition from the stored sets and the plant,
/// through support-function evaluations only. Disturbance sets are checked
/// to cover the coupling they model, computed afresh from the neighbour sets.
pub fn validate(sys: &CoupledSystem, design: &TubeDesign) -> SynthesisResult<ValidationReport> {
    let m = sys.len();
    if design.len() != m {
        return Err(SynthesisError::InvalidOptions(format!("design has {} subsystems, plant has {m}", design.len())));
    }
    let subs = &sys.subsystems;
    let d = &design.subsystems;
    let mut out = Vec::new();
    let k_t: Vec<&DMatrix<f64>> = d.iter().map(|s| &s.k_t).collect();
    let k_hat: Vec<DMatrix<f64>> = d.iter().map(|s| s.k_hat.clone()).collect();
    for i in 0..m {
        out.push(local_schur(sys, i, &d[i].k_t, "K_T"));
        out.push(local_schur(sys, i, &d[i].k_hat, "K̂"));
    }
    out.push(global_schur(sys, &k_t, "K_T"));
    out.push(global_schur(sys, &k_hat.iter().collect::<Vec<_>>(), "K̂"));

    for i in 0..m {
        let id = i + 1;
        let (s, di) = (&subs[i], &d[i]);
        let a_t = closed_loop(s, &di.k_t);
        let a_h = closed_loop(s, &di.k_hat);

        // W and Z
        let mut w_terms: Vec<(&HPolytope, Option<&DMatrix<f64>>)> = Vec::new();
        for (j, c) in s.couplings.iter().map(|(j, c)| (*j, c)).chain(s.significant_residual()) {
            w_terms.push((&subs[j].x_set, Some(&c.a)));
            w_terms.push((&subs[j].u_set, Some(&c.b)));
        }
        out.push(Check::new(format!("W_{id} covers the coupling"), false, cover(&w_terms, &di.w)?));
        out.push(rpi(&a_t, &di.w, &di.z, &format!("Z_{id} RPI"))?);

        // inner tightening
        out.push(Check::new(format!("X̂_{id} ⊕ Z_{id} ⊆ X_{id}"), false, slack(&[(&di.x_hat, None), (&di.z, None)], &s.x_set)?));
        out.push(Check::new(
            format!("Û_{id} ⊕ K_T,{id} Z_{id} ⊆ U_{id}"),
            false,
            slack(&[(&di.u_hat, None), (&di.z, Some(&di.k_t))], &s.u_set)?,
        ));
        out.push(origin_interior(&di.x_hat, &format!("X̂_{id} non-empty with origin interior"))?);
        out.push(origin_interior(&di.u_hat, &format!("Û_{id} non-empty with origin interior"))?);

        // L and V
        let neg = -DMatrix::<f64>::identity(s.nu(), s.nu());
        out.push(Check::new(
            format!("L_{id} ⊇ U_{id} ⊕ (−Û_{id})"),
            false,
            cover(&[(&s.u_set, None), (&di.u_hat, Some(&neg))], &di.l)?,
        ));
        let mut v_terms: Vec<(&HPolytope, Option<&DMatrix<f64>>)> = Vec::new();
        for (j, c) in &s.couplings {
            v_terms.push((&d[*j].z, Some(&c.a)));
            v_terms.push((&d[*j].l, Some(&c.b)));
        }
        for (j, c) in s.significant_residual() {
            v_terms.push((&subs[j].x_set, Some(&c.a)));
            v_terms.push((&subs[j].u_set, Some(&c.b)));
        }
        out.push(Check::new(format!("V_{id} covers the reference mismatch"), false, cover(&v_terms, &di.v)?));
        out.push(assumption4(&di.v, &di.w, i)?);

        // S and δ
        out.push(rpi(&a_h, &di.v, &di.s, &format!("S_{id} RPI"))?);
        out.push(theorem1(di.delta, &di.z, i)?);
        let delta_box = HPolytope::box_set(&DVector::zeros(s.nx()), di.delta.max(0.0))?;
        out.push(Check::new(format!("S_{id} ⊕ box(δ_{id}) ⊆ Z_{id}"), false, slack(&[(&di.s, None), (&delta_box, None)], &di.z)?));

        // outer tightening
        out.push(Check::new(
            format!("X̂̂_{id} ⊕ S_{id} ⊆ X_{id}"),
            false,
            slack(&[(&di.x_hathat, None), (&di.s, None)], &s.x_set)?,
        ));
        out.push(Check::new(
            format!("Û̂_{id} ⊕ K̂_{id} S_{id} ⊆ U_{id}"),
            false,
            slack(&[(&di.u_hathat, None), (&di.s, Some(&di.k_hat))], &s.u_set)?,
        ));
        out.push(origin_interior(&di.x_hathat, &format!("X̂̂_{id} non-empty with origin interior"))?);
        out.push(origin_interior(&di.u_hathat, &format!("Û̂_{id} non-empty with origin interior"))?);

        // D and H
        let mut d_terms: Vec<(&HPolytope, Option<&DMatrix<f64>>)> = Vec::new();
        for (j, c) in &s.couplings {
            d_terms.push((&d[*j].x_hat, Some(&c.a)));
            d_terms.push((&d[*j].u_hat, Some(&c.b)));
        }
        out.push(Check::new(format!("D_{id} covers the reference coupling"), false, cover(&d_terms, &di.d)?));
        let gain_gap = &s.b * (&di.k_hat - &di.k_t);
        let mut h_terms: Vec<(&HPolytope, Option<&DMatrix<f64>>)> = vec![(&di.h, Some(&a_h)), (&di.d, None)];
        if di.distinct_gains() {
            h_terms.push((&di.xf_hathat, Some(&gain_gap)));
        }
        out.push(Check::new(format!("Assumption 5: H_{id} RPI"), false, slack(&h_terms, &di.h)?));
        out.push(tube_nesting(&di.s, &di.h, &di.z, i)?);
        out.push(brf_box(&di.h, di.delta, i)?);
    }

    // terminal sets
    let xf_hh: Vec<HPolytope> = d.iter().map(|s| s.xf_hathat.clone()).collect();
    for i in 0..m {
        out.extend(outer_terminal(sys, i, &k_hat, &xf_hh, &d[i].x_hathat, &d[i].u_hathat)?);
    }
    for i in 0..m {
        let di = &d[i];
        out.extend(inner_terminal(&subs[i], &di.k_t, &di.xf_hat, &di.x_hat, &di.u_hat, &di.xf_hathat, &di.h, i)?);
    }

    // terminal weights
    for i in 0..m {
        let id = i + 1;
        let di = &d[i];
        let a_h = closed_loop(&subs[i], &di.k_hat);
        let qk = &di.q + di.k_hat.transpose() * &di.r * &di.k_hat;
        let residual = (&di.p - a_h.transpose() * &di.p * &a_h - qk).amax();
        out.push(Check::new(format!("P_{id} solves the Lyapunov equation"), false, -residual));
        let sym = (&di.p - di.p.transpose()).amax();
        let min_eig = if sym > 1e-9 { f64::NEG_INFINITY } else { di.p.clone().symmetric_eigenvalues().min() };
        out.push(Check::new(format!("P_{id} positive definite"), true, min_eig));
    }
    Ok(ValidationReport { checks: out })
}

/// `min_rows(β − Σ_k h(P_k, M_kᵀ a))` over the canonical rows of `outer`:
/// non-negative when `outer` contains the sum of the mapped sets.
fn cover(terms: &[(&HPolytope, Option<&DMatrix<f64>>)], outer: &HPolytope) -> GeomResult<f64> {
    if terms.is_empty() {
        // the empty sum is the origin
        let n = outer.dim();
        return slack(&[(&HPolytope::origin(n), None)], outer);
    }
    slack(terms, outer)
}
