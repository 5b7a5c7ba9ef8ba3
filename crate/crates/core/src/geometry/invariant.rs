use nalgebra::{DMatrix, DVector};

use super::ops::{minkowski_sum, minkowski_sum_all, support};
use super::{GeomError, GeomResult, HPolytope};
use crate::numkernel::{spectral_radius, NumError};

/// Default cap on the number of terms in the mRPI outer approximation.
pub const RPI_ITERATION_CAP: usize = 500;

const SCHUR_MARGIN: f64 = 1e-9;
const INTERIOR_MARGIN: f64 = 1e-12;
const RPI_CHECK_TOL: f64 = 1e-8;
const OINF_TOL: f64 = 1e-9;

fn check_square(a: &DMatrix<f64>, dim: usize) -> GeomResult<()> {
    if !a.is_square() || a.nrows() != dim {
        return Err(GeomError::DimensionMismatch(format!("matrix {:?} for a {dim}-D set", a.shape())));
    }
    Ok(())
}

/// ε-outer approximation of the minimal robust positively invariant set of
/// `x⁺ = A_cl x + w`, `w ∈ W`.
///
/// Finds the smallest `s` with `A_clˢ W ⊆ α W` and `α/(1−α)·M(s) ≤ eps`,
/// where `M(s)` bounds `F_s = ⊕_{k<s} A_clᵏ W` in the ∞-norm, and returns
/// `(1−α)⁻¹ F_s`. `W = {0}` gives exactly `{0}`. Otherwise, if the origin
/// is not strictly inside `W`, `W` is first inflated by a box small enough
/// that the result still lies within `eps` of the approximation for the
/// original `W`. `cap` bounds `s`.
pub fn rpi_outer_approx(a_cl: &DMatrix<f64>, w: &HPolytope, eps: f64, cap: usize) -> GeomResult<HPolytope> {
    let n = w.dim();
    let Some(w) = prepare(a_cl, w, eps)? else {
        return Ok(HPolytope::origin(n));
    };
    let (s, alpha) = rakovic_order(a_cl, &w, eps, cap)?;

    let mut terms = Vec::with_capacity(s);
    let mut power = DMatrix::identity(n, n);
    for _ in 0..s {
        terms.push(super::linear_map(&power, &w)?);
        power = a_cl * &power;
    }
    let f = minkowski_sum_all(&terms, n)?;
    let z = f.scale(1.0 / (1.0 - alpha))?;

    for i in 0..z.num_rows() {
        let a = z.a().row(i).transpose();
        let lhs = support(&z, &(a_cl.transpose() * &a))? + support(&w, &a)?;
        if lhs > z.b()[i] + RPI_CHECK_TOL * (1.0 + z.b()[i].abs()) {
            return Err(NumError::NumericalFailure(format!("RPI verification failed on row {i}: {lhs} > {}", z.b()[i])).into());
        }
    }
    Ok(z)
}

/// Bounded-complexity variant of [`rpi_outer_approx`] with facet normals
/// fixed to `directions`.
///
/// Each offset starts at the exact support of the ε-approximation in its
/// direction. Offsets are then raised to `h(A_clᵀa) + h_W(a)` until the
/// remaining defect is small, and finally scaled by the `λ ≥ 1` for which
/// positive homogeneity makes the set exactly RPI. The result contains the
/// ε-approximation; its distance to it depends on the directions.
pub fn rpi_template_approx(
    a_cl: &DMatrix<f64>,
    w: &HPolytope,
    eps: f64,
    cap: usize,
    directions: &[DVector<f64>],
) -> GeomResult<HPolytope> {
    let n = w.dim();
    if directions.is_empty() || directions.iter().any(|d| d.len() != n || !(d.norm() > 0.0)) {
        return Err(GeomError::InvalidInput("template directions must be nonzero and match the set dimension".into()));
    }
    let Some(w) = prepare(a_cl, w, eps)? else {
        return Ok(HPolytope::origin(n));
    };
    let (s, alpha) = rakovic_order(a_cl, &w, eps, cap)?;

    let k = directions.len();
    let mut a = DMatrix::zeros(k, n);
    for (i, d) in directions.iter().enumerate() {
        a.set_row(i, &(d / d.norm()).transpose());
    }
    let mut hw = DVector::zeros(k);
    let mut c = DVector::zeros(k);
    let mut power_t: DMatrix<f64> = DMatrix::identity(n, n);
    for j in 0..s {
        for i in 0..k {
            let h = support(&w, &(&power_t * a.row(i).transpose()))?;
            if j == 0 {
                hw[i] = h;
            }
            c[i] += h;
        }
        power_t = &power_t * a_cl.transpose();
    }
    c /= 1.0 - alpha;

    let image = |c: &DVector<f64>| -> GeomResult<DVector<f64>> {
        let omega = HPolytope::new(a.clone(), c.clone())?;
        let mut f = DVector::zeros(k);
        for i in 0..k {
            f[i] = support(&omega, &(a_cl.transpose() * a.row(i).transpose()))? + hw[i];
        }
        Ok(f)
    };
    for _ in 0..TEMPLATE_REPAIR_CAP {
        let f = image(&c)?;
        let mut lambda = 1.0f64;
        for i in 0..k {
            let defect = (f[i] - c[i]).max(0.0);
            lambda = lambda.max(if defect < hw[i] { hw[i] / (hw[i] - defect) } else { f64::INFINITY });
        }
        if lambda <= 1.0 + TEMPLATE_SCALE_TOL {
            c *= lambda * (1.0 + 1e-12);
            let z = HPolytope::new(a.clone(), c.clone())?.canonicalize()?;
            let g = image(&c)?;
            if let Some(i) = (0..k).find(|&i| g[i] > c[i] + RPI_CHECK_TOL * (1.0 + c[i].abs())) {
                return Err(NumError::NumericalFailure(format!("template RPI verification failed on row {i}: {} > {}", g[i], c[i])).into());
            }
            return Ok(z);
        }
        for i in 0..k {
            c[i] = c[i].max(f[i]);
        }
    }
    Err(GeomError::IterationLimit { iterations: TEMPLATE_REPAIR_CAP, partial: None })
}

const TEMPLATE_REPAIR_CAP: usize = 1000;
/// Largest certifying scale accepted without another repair pass.
const TEMPLATE_SCALE_TOL: f64 = 1e-6;

/// Stability check and, when the origin is not strictly inside `W`, the
/// inflation by a box whose effect on the mRPI is at most `eps`. `None`
/// when `W = {0}`.
fn prepare(a_cl: &DMatrix<f64>, w: &HPolytope, eps: f64) -> GeomResult<Option<HPolytope>> {
    let n = w.dim();
    check_square(a_cl, n)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(GeomError::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    if w.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let rho = spectral_radius(a_cl)?;
    if rho >= 1.0 - SCHUR_MARGIN {
        return Err(GeomError::NotSchur(rho));
    }
    let mut w = w.canonicalize()?;
    let mut extent: f64 = 0.0;
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        extent = extent.max(support(&w, &e)?).max(support(&w, &(-e))?);
    }
    if extent <= INTERIOR_MARGIN {
        return Ok(None);
    }
    if w.b().min() <= INTERIOR_MARGIN {
        let eta = eps / power_norm_sum(a_cl)?;
        w = minkowski_sum(&w, &HPolytope::box_set(&DVector::zeros(n), eta)?)?;
        if w.b().min() <= INTERIOR_MARGIN {
            return Err(GeomError::InvalidInput("disturbance set does not contain the origin".into()));
        }
    }
    Ok(Some(w))
}

/// Smallest `s` with `A_clˢ W ⊆ α W` and `α/(1−α)·M(s) ≤ eps`, from
/// support functions alone.
fn rakovic_order(a_cl: &DMatrix<f64>, w: &HPolytope, eps: f64, cap: usize) -> GeomResult<(usize, f64)> {
    let n = w.dim();
    let mut power = DMatrix::identity(n, n);
    let mut running = vec![0.0; 2 * n];
    let mut s = 0;
    loop {
        for j in 0..n {
            let col = power.row(j).transpose();
            running[2 * j] += support(w, &col)?;
            running[2 * j + 1] += support(w, &(-col))?;
        }
        power = a_cl * &power;
        s += 1;
        let mut alpha = 0.0f64;
        for i in 0..w.num_rows() {
            let dir = power.transpose() * w.a().row(i).transpose();
            alpha = alpha.max(support(w, &dir)? / w.b()[i]);
        }
        let bound = running.iter().copied().fold(0.0, f64::max);
        if alpha < 1.0 && alpha / (1.0 - alpha) * bound <= eps {
            return Ok((s, alpha));
        }
        if s >= cap {
            return Err(GeomError::IterationLimit { iterations: cap, partial: None });
        }
    }
}

/// `Σ_k ‖A_clᵏ‖∞`, summed until the terms fall below 1e-16 of the total.
fn power_norm_sum(a: &DMatrix<f64>) -> GeomResult<f64> {
    let inf_norm = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).abs().sum()).fold(0.0, f64::max);
    let mut power = DMatrix::identity(a.nrows(), a.ncols());
    let mut total = 0.0;
    for _ in 0..1_000_000 {
        let t = inf_norm(&power);
        total += t;
        if t <= 1e-16 * total {
            return Ok(total);
        }
        power = a * &power;
    }
    Err(GeomError::IterationLimit { iterations: 1_000_000, partial: None })
}

/// Maximal positively invariant subset of `X` for `x⁺ = A_cl x`.
///
/// Iterates `Ω ← Ω ∩ {x : A_cl x ∈ Ω}` from `Ω = X` until every constraint
/// of the one-step preimage is already implied (support slack ≥ −1e-9).
/// Hitting `cap` returns [`GeomError::IterationLimit`] with the last iterate.
pub fn max_admissible_invariant(a_cl: &DMatrix<f64>, x: &HPolytope, cap: usize) -> GeomResult<HPolytope> {
    let n = x.dim();
    check_square(a_cl, n)?;
    if x.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let rho = spectral_radius(a_cl)?;
    if rho >= 1.0 {
        return Err(GeomError::NotSchur(rho));
    }
    let mut omega = x.canonicalize()?;
    if omega.is_empty() {
        return Err(GeomError::EmptySet);
    }
    for _ in 0..cap {
        let pre = omega.preimage(a_cl)?;
        let mut implied = true;
        for i in 0..pre.num_rows() {
            let d = pre.a().row(i).transpose();
            let h = match support(&omega, &d) {
                Ok(h) => h,
                Err(GeomError::Unbounded) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if h > pre.b()[i] + OINF_TOL * (1.0 + pre.b()[i].abs()) {
                implied = false;
                break;
            }
        }
        if implied {
            return Ok(omega);
        }
        omega = omega.intersect(&pre)?;
        if omega.is_empty() {
            return Ok(omega);
        }
    }
    Err(GeomError::IterationLimit { iterations: cap, partial: Some(Box::new(omega)) })
}
