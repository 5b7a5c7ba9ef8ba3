use nalgebra::{DMatrix, Schur};

use super::{NumError, NumResult};

/// Stabilizing state feedback in the `u = K x` convention together with the
/// Riccati cost-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrResult {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_CAP: usize = 200_000;

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> NumResult<f64> {
    if !a.is_square() {
        return Err(NumError::DimensionMismatch(format!("spectral radius of a {:?} matrix", a.shape())));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(NumError::NumericalFailure("non-finite matrix".into()));
    }
    let schur = Schur::try_new(a.clone(), 1e-15, 10_000)
        .ok_or_else(|| NumError::NumericalFailure("Schur iteration did not converge".into()))?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Discrete-time LQR via fixed-point Riccati iteration.
///
/// Iterates `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` from `P = Q` until the
/// max-norm change drops below 1e-12, then returns `K = −(R + BᵀPB)⁻¹BᵀPA`.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> NumResult<LqrResult> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(NumError::DimensionMismatch(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if r.clone().cholesky().is_none() {
        return Err(NumError::InvalidProblem("R must be positive definite".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_CAP {
        let s = r + &bt * &p * b;
        let chol = s
            .cholesky()
            .ok_or_else(|| NumError::NumericalFailure("R + BᵀPB lost definiteness".into()))?;
        let bpa = &bt * &p * a;
        let next = q + &at * &p * a - bpa.transpose() * chol.solve(&bpa);
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) || p.amax() > 1e15 {
            return Err(NumError::NotStabilizable);
        }
        if delta < RICCATI_TOL * (1.0 + p.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumError::IterationLimit(RICCATI_CAP));
    }
    let s = r + &bt * &p * b;
    let k = -s
        .cholesky()
        .ok_or_else(|| NumError::NumericalFailure("R + BᵀPB lost definiteness".into()))?
        .solve(&(&bt * &p * a));
    let rho = spectral_radius(&(a + b * &k))?;
    if rho >= 1.0 {
        return Err(NumError::NotStabilizable);
    }
    Ok(LqrResult { k, p })
}

/// Solves `P = A_clᵀ P A_cl + Q` by summing the series
/// `Σ (A_clᵏ)ᵀ Q A_clᵏ` with doubling until the increment is below 1e-12.
pub fn dlyap(a_cl: &DMatrix<f64>, q: &DMatrix<f64>) -> NumResult<DMatrix<f64>> {
    let n = a_cl.nrows();
    if !a_cl.is_square() || q.shape() != (n, n) {
        return Err(NumError::DimensionMismatch(format!("A {:?}, Q {:?}", a_cl.shape(), q.shape())));
    }
    let rho = spectral_radius(a_cl)?;
    if rho >= 1.0 - 1e-12 {
        return Err(NumError::NotSchur(rho));
    }
    let mut p = q.clone();
    let mut ak = a_cl.clone();
    for _ in 0..200 {
        let inc = ak.transpose() * &p * &ak;
        let size = inc.amax();
        p += inc;
        ak = &ak * &ak;
        if size < 1e-12 * (1.0 + p.amax()) {
            return Ok((&p + p.transpose()) * 0.5);
        }
    }
    Err(NumError::IterationLimit(200))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn zero_dynamics_zero_gain() {
        let r = dlqr(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!(r.k[(0, 0)].abs() < 1e-15);
        assert!((r.p[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn integrator_is_stabilized_for_any_r() {
        for &rv in &[1e-3, 0.1, 1.0, 10.0, 1e3] {
            let res = dlqr(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![rv]).unwrap();
            assert!((1.0 + res.k[(0, 0)]).abs() < 1.0, "R = {rv}");
        }
    }

    #[test]
    fn unstabilizable_pair_rejected() {
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        let b = dmatrix![0.0; 1.0];
        let err = dlqr(&a, &b, &DMatrix::identity(2, 2), &dmatrix![1.0]).unwrap_err();
        assert_eq!(err, NumError::NotStabilizable);
    }

    #[test]
    fn lyapunov_scalar_and_zero() {
        let p = dlyap(&dmatrix![0.5], &dmatrix![1.0]).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        let q = dmatrix![2.0, 0.5; 0.5, 1.0];
        assert_eq!(dlyap(&DMatrix::zeros(2, 2), &q).unwrap(), q);
        assert!(matches!(dlyap(&dmatrix![1.0], &dmatrix![1.0]), Err(NumError::NotSchur(_))));
    }

    #[test]
    fn spectral_radius_basics() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_radius(&dmatrix![0.3, 0.0; 0.0, -0.8]).unwrap() - 0.8).abs() < 1e-12);
        // rotation by 90° scaled by 0.9: complex pair
        let rot = dmatrix![0.0, -0.9; 0.9, 0.0];
        assert!((spectral_radius(&rot).unwrap() - 0.9).abs() < 1e-12);
    }
}
